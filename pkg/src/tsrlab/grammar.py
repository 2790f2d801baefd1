"""HTML table-structure vocabulary, tokenizer and tag-tree parser.

The vocabulary has 32 symbols. Ids are fixed as follows and exported through
:func:`manifest` so other tools can check they agree::

    0-3    <pad> <sos> <eos> <unk>
    4-11   <thead> </thead> <tbody> </tbody> <tr> </tr> <td> </td>
    12-13  <td  >
    14-22  ' rowspan="2"' .. ' rowspan="10"'
    23-31  ' colspan="2"' .. ' colspan="10"'

A spanning cell is the fragment run ``<td`` [attributes] ``>`` ... ``</td>``.
"""

from __future__ import annotations

import enum
import hashlib
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import (
    ContainsUnknown,
    DanglingFragment,
    IllegalNesting,
    LengthExceeded,
    SpanOverlap,
    UnbalancedTag,
)

MANIFEST_VERSION = "tsrlab-vocab/1"
DEFAULT_MAX_LEN = 512
MAX_SPAN = 10

PAD, SOS, EOS, UNK = "<pad>", "<sos>", "<eos>", "<unk>"
SPECIALS = (PAD, SOS, EOS, UNK)
TAGS = ("<thead>", "</thead>", "<tbody>", "</tbody>", "<tr>", "</tr>", "<td>", "</td>")
TD_OPEN, TD_CLOSE_FRAGMENT = "<td", ">"


def _span_surface(attr: str, k: int) -> str:
    return f' {attr}="{k}"'


_SURFACES: tuple[str, ...] = (
    SPECIALS
    + TAGS
    + (TD_OPEN, TD_CLOSE_FRAGMENT)
    + tuple(_span_surface("rowspan", k) for k in range(2, MAX_SPAN + 1))
    + tuple(_span_surface("colspan", k) for k in range(2, MAX_SPAN + 1))
)


@dataclass(frozen=True)
class Token:
    id: int
    surface: str

    @property
    def is_special(self) -> bool:
        return self.surface in SPECIALS

    @property
    def span(self) -> tuple[str, int] | None:
        """``("rowspan", k)`` / ``("colspan", k)`` for attribute tokens, else None."""
        m = _ATTR_RE.fullmatch(self.surface)
        if m is None:
            return None
        return m.group(1), int(m.group(2))

    def __str__(self) -> str:
        return self.surface


_ATTR_RE = re.compile(r' (rowspan|colspan)="(\d+)"')
_VOCAB: tuple[Token, ...] = tuple(Token(i, s) for i, s in enumerate(_SURFACES))
_BY_SURFACE = {t.surface: t for t in _VOCAB}

PAD_ID = _BY_SURFACE[PAD].id
SOS_ID = _BY_SURFACE[SOS].id
EOS_ID = _BY_SURFACE[EOS].id
UNK_ID = _BY_SURFACE[UNK].id
VOCAB_SIZE = len(_VOCAB)


def vocabulary() -> list[Token]:
    return list(_VOCAB)


def token(key: str | int) -> Token:
    """Look a token up by surface form or id."""
    if isinstance(key, int):
        return _VOCAB[key]
    return _BY_SURFACE[key]


def manifest() -> str:
    """Versioned ``id<TAB>surface`` listing of the vocabulary.

    Attribute surfaces keep their leading space, so consumers must split on the
    first tab only.
    """
    lines = [f"# {MANIFEST_VERSION}"] + [f"{t.id}\t{t.surface}" for t in _VOCAB]
    return "\n".join(lines) + "\n"


def manifest_hash() -> str:
    return hashlib.sha256(manifest().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TokenSequence(Sequence[Token]):
    ids: tuple[int, ...]
    bound: int = field(default=DEFAULT_MAX_LEN, compare=False)  # a limit, not part of the value

    def __post_init__(self) -> None:
        if len(self.ids) > self.bound:
            raise LengthExceeded(f"sequence of {len(self.ids)} tokens exceeds bound {self.bound}")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return TokenSequence(self.ids[i], self.bound)
        return _VOCAB[self.ids[i]]

    def __iter__(self) -> Iterator[Token]:
        return (_VOCAB[i] for i in self.ids)

    @property
    def surfaces(self) -> list[str]:
        return [_VOCAB[i].surface for i in self.ids]

    @classmethod
    def from_ids(cls, ids: Iterable[int], bound: int = DEFAULT_MAX_LEN) -> "TokenSequence":
        ids = tuple(int(i) for i in ids)
        for i in ids:
            if not 0 <= i < VOCAB_SIZE:
                raise ValueError(f"token id {i} outside vocabulary")
        return cls(ids, bound)

    def with_specials(self) -> "TokenSequence":
        """Wrap in ``<sos>`` ... ``<eos>`` (decoder target form)."""
        return TokenSequence((SOS_ID,) + self.ids + (EOS_ID,), max(self.bound, len(self.ids) + 2))


def tokenize(raw: Iterable[str], bound: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Map surface strings to tokens; anything outside the vocabulary becomes ``<unk>``."""
    ids = tuple(_BY_SURFACE[s].id if s in _BY_SURFACE else UNK_ID for s in raw)
    return TokenSequence(ids, bound)


_SPLIT_RE = re.compile(
    r"</?(?:thead|tbody|tr|td)>|<(?:sos|eos|pad|unk)>|<td| [a-z]+=\"[^\"]*\"|>|\s+"
)


def split_structure(html: str) -> list[str]:
    """Split a canonical structure string into surface strings.

    Unrecognised stretches are returned verbatim (they tokenize to ``<unk>``);
    whitespace between tags is dropped.
    """
    out: list[str] = []
    pos = 0
    for m in _SPLIT_RE.finditer(html):
        if m.start() > pos:
            out.append(html[pos : m.start()])
        if not m.group().isspace():
            out.append(m.group())
        pos = m.end()
    if pos < len(html):
        out.append(html[pos:])
    return out


def detokenize(seq: Iterable[Token] | TokenSequence) -> str:
    """Concatenate surface forms; ``<sos>``, ``<eos>`` and ``<pad>`` are dropped."""
    parts = []
    for t in seq:
        if t.id == UNK_ID:
            raise ContainsUnknown("cannot detokenize a sequence containing <unk>")
        if t.is_special:
            continue
        parts.append(t.surface)
    return "".join(parts)


# -- tag tree --------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    """One element of a table tag tree. Only ``td`` nodes carry spans."""

    tag: str
    rowspan: int = 1
    colspan: int = 1
    children: tuple["Node", ...] = ()

    @property
    def spanning(self) -> bool:
        return self.rowspan > 1 or self.colspan > 1

    def preorder(self) -> Iterator["Node"]:
        yield self
        for c in self.children:
            yield from c.preorder()

    def size(self) -> int:
        return sum(1 for _ in self.preorder())


_ALLOWED_CHILDREN = {
    "table": ("thead", "tbody", "tr"),
    "thead": ("tr",),
    "tbody": ("tr",),
    "tr": ("td",),
    "td": (),
}


@dataclass(frozen=True)
class TableTree:
    root: Node = field(default_factory=lambda: Node("table"))

    def __post_init__(self) -> None:
        if self.root.tag != "table":
            raise IllegalNesting(f"root must be 'table', got {self.root.tag!r}")
        for node in self.root.preorder():
            allowed = _ALLOWED_CHILDREN.get(node.tag)
            if allowed is None:
                raise IllegalNesting(f"unknown tag {node.tag!r}")
            if node.tag != "td" and node.spanning:
                raise IllegalNesting(f"{node.tag} cannot carry span attributes")
            if not (1 <= node.rowspan <= MAX_SPAN and 1 <= node.colspan <= MAX_SPAN):
                raise IllegalNesting(f"span outside 1..{MAX_SPAN}")
            for c in node.children:
                if c.tag not in allowed:
                    raise IllegalNesting(f"{c.tag} not allowed inside {node.tag}")

    def nodes(self) -> list[Node]:
        """All nodes in preorder, synthetic root first."""
        return list(self.root.preorder())

    def rows(self) -> list[Node]:
        out = []
        for child in self.root.children:
            if child.tag == "tr":
                out.append(child)
            else:
                out.extend(child.children)
        return out

    def serialize(self) -> list[str]:
        """Surface strings, attributes in rowspan-then-colspan order."""
        out: list[str] = []

        def emit(n: Node) -> None:
            if n.tag == "td" and n.spanning:
                out.append(TD_OPEN)
                if n.rowspan > 1:
                    out.append(_span_surface("rowspan", n.rowspan))
                if n.colspan > 1:
                    out.append(_span_surface("colspan", n.colspan))
                out.append(TD_CLOSE_FRAGMENT)
            else:
                out.append(f"<{n.tag}>")
            for c in n.children:
                emit(c)
            out.append(f"</{n.tag}>")

        for c in self.root.children:
            emit(c)
        return out


class _Open:
    __slots__ = ("tag", "rowspan", "colspan", "children")

    def __init__(self, tag: str, rowspan: int = 1, colspan: int = 1):
        self.tag, self.rowspan, self.colspan = tag, rowspan, colspan
        self.children: list[Node] = []

    def close(self) -> Node:
        return Node(self.tag, self.rowspan, self.colspan, tuple(self.children))


def parse(seq: Iterable[Token] | TokenSequence | Iterable[str]) -> TableTree:
    """Build a :class:`TableTree` from a token sequence.

    ``<sos>``/``<eos>``/``<pad>`` are skipped. Raises :class:`UnbalancedTag`,
    :class:`IllegalNesting`, :class:`DanglingFragment` or
    :class:`ContainsUnknown` on malformed input.
    """
    toks = [t if isinstance(t, Token) else _BY_SURFACE.get(t, _VOCAB[UNK_ID]) for t in seq]
    stack = [_Open("table")]
    i = 0
    while i < len(toks):
        t = toks[i]
        s = t.surface
        i += 1
        if t.id == UNK_ID:
            raise ContainsUnknown(f"<unk> at position {i - 1}")
        if t.is_special:
            continue
        top = stack[-1]
        if s == TD_OPEN:
            spans = {"rowspan": 1, "colspan": 1}
            seen = set()
            while i < len(toks) and toks[i].span is not None:
                attr, k = toks[i].span  # type: ignore[misc]
                if attr in seen:
                    raise DanglingFragment(f"duplicate {attr} at position {i}")
                seen.add(attr)
                spans[attr] = k
                i += 1
            if i >= len(toks) or toks[i].surface != TD_CLOSE_FRAGMENT:
                raise DanglingFragment(f"'<td' at position {i - len(seen) - 1} is not closed by '>'")
            i += 1
            _check_child(top, "td")
            stack.append(_Open("td", spans["rowspan"], spans["colspan"]))
        elif s == TD_CLOSE_FRAGMENT or t.span is not None:
            raise DanglingFragment(f"{s!r} outside a '<td' fragment at position {i - 1}")
        elif s.startswith("</"):
            tag = s[2:-1]
            if top.tag != tag:
                raise UnbalancedTag(f"{s} at position {i - 1} closes <{top.tag}>")
            stack.pop()
            stack[-1].children.append(top.close())
        else:
            tag = s[1:-1]
            _check_child(top, tag)
            stack.append(_Open(tag))
    if len(stack) > 1:
        raise UnbalancedTag(f"<{stack[-1].tag}> never closed")
    return TableTree(stack[0].close())


def _check_child(parent: _Open, tag: str) -> None:
    if tag not in _ALLOWED_CHILDREN[parent.tag]:
        raise IllegalNesting(f"<{tag}> not allowed inside <{parent.tag}>")


def parse_html(html: str) -> TableTree:
    return parse(split_structure(html))


class TableClass(str, enum.Enum):
    SIMPLE = "simple"
    COMPLEX = "complex"


def classify(tree: TableTree) -> TableClass:
    if any(n.spanning for n in tree.root.preorder()):
        return TableClass.COMPLEX
    return TableClass.SIMPLE


# -- occupancy grid --------------------------------------------------------


class RaggedRowsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GridTable:
    rows: int
    cols: int
    occupancy: tuple[tuple[int | None, ...], ...]
    ragged: bool = False

    @property
    def n_cells(self) -> int:
        return len({c for row in self.occupancy for c in row if c is not None})


def expand_grid(tree: TableTree) -> GridTable:
    """Lay cells out on a row x column grid, honouring row/col spans.

    Rowspans reaching past the last ``tr`` extend the grid. Rows of unequal
    width set ``ragged`` and emit :class:`RaggedRowsWarning`.
    """
    cells: dict[tuple[int, int], int] = {}
    cell_id = 0
    rows = tree.rows()
    for r, tr in enumerate(rows):
        col = 0
        for td in tr.children:
            while (r, col) in cells:
                col += 1
            for dr in range(td.rowspan):
                for dc in range(td.colspan):
                    pos = (r + dr, col + dc)
                    if pos in cells:
                        raise SpanOverlap(
                            f"cell {cell_id} collides with cell {cells[pos]} at {pos}"
                        )
                    cells[pos] = cell_id
            cell_id += 1
            col += td.colspan
    n_rows = max([len(rows)] + [r + 1 for r, _ in cells])
    n_cols = max([0] + [c + 1 for _, c in cells])
    grid = [[None] * n_cols for _ in range(n_rows)]
    for (r, c), cid in cells.items():
        grid[r][c] = cid
    widths = {sum(v is not None for v in row) for row in grid}
    ragged = len(widths) > 1
    if ragged:
        warnings.warn("rows have unequal width after span expansion", RaggedRowsWarning, stacklevel=2)
    return GridTable(n_rows, n_cols, tuple(tuple(row) for row in grid), ragged)
