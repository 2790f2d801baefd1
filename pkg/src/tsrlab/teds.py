"""Tree-edit-distance similarity (TEDS) over table tag trees.

Structure-only variant: two nodes rename for free when tag and spans agree,
otherwise at unit cost. ``|T|`` counts the synthetic ``table`` root.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Sequence

from .errors import EmptyInput, GrammarError
from .grammar import Node, TableClass, TableTree, Token, TokenSequence, parse

NODE_COUNT_CONVENTION = "node counts include the synthetic table root"


def _rename(a: Node, b: Node) -> float:
    same = a.tag == b.tag and a.rowspan == b.rowspan and a.colspan == b.colspan
    return 0.0 if same else 1.0


@dataclass(frozen=True)
class CostModel:
    insert_cost: float = 1.0
    delete_cost: float = 1.0
    rename_cost: Callable[[Node, Node], float] = _rename


UNIT_COST = CostModel()


class _Postorder:
    """Postorder node list with leftmost-leaf indices and keyroots."""

    def __init__(self, root: Node):
        self.nodes: list[Node] = []
        self.lml: list[int] = []
        self._walk(root)
        seen: dict[int, int] = {}
        for i, l in enumerate(self.lml):
            seen[l] = i  # highest postorder index sharing each leftmost leaf
        self.keyroots = sorted(seen.values())

    def _walk(self, node: Node) -> int:
        first = None
        for c in node.children:
            leftmost = self._walk(c)
            if first is None:
                first = leftmost
        idx = len(self.nodes)
        self.nodes.append(node)
        self.lml.append(idx if first is None else first)
        return self.lml[idx]


def tree_edit_distance(a: Node | TableTree, b: Node | TableTree, cost: CostModel = UNIT_COST) -> float:
    """Ordered labelled tree edit distance (Zhang & Shasha keyroot algorithm)."""
    ta = _Postorder(a.root if isinstance(a, TableTree) else a)
    tb = _Postorder(b.root if isinstance(b, TableTree) else b)
    na, nb = len(ta.nodes), len(tb.nodes)
    ins, dele, ren = cost.insert_cost, cost.delete_cost, cost.rename_cost
    td = [[0.0] * nb for _ in range(na)]

    for i in ta.keyroots:
        for j in tb.keyroots:
            li, lj = ta.lml[i], tb.lml[j]
            m, n = i - li + 2, j - lj + 2
            fd = [[0.0] * n for _ in range(m)]
            for x in range(1, m):
                fd[x][0] = fd[x - 1][0] + dele
            for y in range(1, n):
                fd[0][y] = fd[0][y - 1] + ins
            for x in range(1, m):
                ix = li + x - 1
                for y in range(1, n):
                    jy = lj + y - 1
                    if ta.lml[ix] == li and tb.lml[jy] == lj:
                        fd[x][y] = min(
                            fd[x - 1][y] + dele,
                            fd[x][y - 1] + ins,
                            fd[x - 1][y - 1] + ren(ta.nodes[ix], tb.nodes[jy]),
                        )
                        td[ix][jy] = fd[x][y]
                    else:
                        px = ta.lml[ix] - li
                        py = tb.lml[jy] - lj
                        fd[x][y] = min(
                            fd[x - 1][y] + dele,
                            fd[x][y - 1] + ins,
                            fd[px][py] + td[ix][jy],
                        )
    return td[na - 1][nb - 1]


def _as_tree(x: TableTree | TokenSequence | Iterable[Token] | Iterable[str]) -> TableTree:
    return x if isinstance(x, TableTree) else parse(x)


def teds_trees(pred: TableTree, gt: TableTree, cost: CostModel = UNIT_COST) -> float:
    n_pred, n_gt = pred.root.size(), gt.root.size()
    if n_pred == 1 and n_gt == 1:
        return 1.0
    dist = tree_edit_distance(pred, gt, cost)
    return max(0.0, 1.0 - dist / max(n_pred, n_gt))


def teds(pred, gt, cost: CostModel = UNIT_COST) -> float:
    """TEDS score in [0, 1].

    ``pred`` and ``gt`` may be token sequences, surface-string lists or parsed
    trees. An unparseable prediction scores 0.0; an unparseable ground truth
    raises.
    """
    gt_tree = _as_tree(gt)
    try:
        pred_tree = _as_tree(pred)
    except GrammarError:
        return 0.0
    return teds_trees(pred_tree, gt_tree, cost)


# -- aggregation -----------------------------------------------------------


def percent(x: float) -> float:
    """Fraction -> percent, rounded half-up to 2 decimals."""
    return float((Decimal(repr(x)) * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    table_class: TableClass
    score: float
    flag: str | None = None


@dataclass(frozen=True)
class TedsReport:
    per_sample: tuple[SampleScore, ...]
    simple_mean: float | None
    complex_mean: float | None
    all_mean: float
    flags: tuple[str, ...] = field(default=())

    @property
    def n_simple(self) -> int:
        return sum(s.table_class is TableClass.SIMPLE for s in self.per_sample)

    @property
    def n_complex(self) -> int:
        return sum(s.table_class is TableClass.COMPLEX for s in self.per_sample)


def _mean(xs: Sequence[float]) -> float | None:
    return percent(sum(xs) / len(xs)) if xs else None


def aggregate(scores: Iterable[SampleScore | tuple]) -> TedsReport:
    """Class means and overall mean (percent). ``all`` averages samples, not classes.

    Accepts :class:`SampleScore` items or ``(TableClass, score)`` pairs.
    """
    samples = []
    for i, s in enumerate(scores):
        if not isinstance(s, SampleScore):
            cls, score = s
            s = SampleScore(str(i), TableClass(cls), float(score))
        samples.append(s)
    if not samples:
        raise EmptyInput("no scores to aggregate")
    simple = [s.score for s in samples if s.table_class is TableClass.SIMPLE]
    complex_ = [s.score for s in samples if s.table_class is TableClass.COMPLEX]
    flags = tuple(f"{s.sample_id}: {s.flag}" for s in samples if s.flag)
    return TedsReport(
        per_sample=tuple(samples),
        simple_mean=_mean(simple),
        complex_mean=_mean(complex_),
        all_mean=_mean([s.score for s in samples]),  # type: ignore[arg-type]
        flags=flags,
    )
