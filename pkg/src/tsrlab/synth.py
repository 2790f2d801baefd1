"""Random table structures and toy renderings of them."""

from __future__ import annotations

import numpy as np

from .grammar import MAX_SPAN, Node, TableTree, TokenSequence, expand_grid, tokenize


def random_tree(
    rng: np.random.Generator,
    max_rows: int = 4,
    max_cols: int = 4,
    span_prob: float = 0.2,
    header_prob: float = 0.5,
    min_rows: int = 0,
) -> TableTree:
    """A random well-formed table: spans never overlap and stay inside their section."""
    n_rows = int(rng.integers(min_rows, max_rows + 1))
    n_cols = int(rng.integers(1, max_cols + 1))
    n_head = int(rng.integers(1, n_rows + 1)) if n_rows and rng.random() < header_prob else 0
    taken = np.zeros((n_rows, n_cols), dtype=bool)
    rows: list[list[Node]] = [[] for _ in range(n_rows)]
    for r in range(n_rows):
        section_end = n_head if r < n_head else n_rows
        for c in range(n_cols):
            if taken[r, c]:
                continue
            rs = cs = 1
            if rng.random() < span_prob:
                rs = int(rng.integers(1, min(MAX_SPAN, section_end - r) + 1))
                cs = int(rng.integers(1, min(MAX_SPAN, n_cols - c) + 1))
                # shrink the colspan until the rectangle is free
                while cs > 1 and taken[r : r + rs, c : c + cs].any():
                    cs -= 1
                while rs > 1 and taken[r : r + rs, c : c + cs].any():
                    rs -= 1
            taken[r : r + rs, c : c + cs] = True
            rows[r].append(Node("td", rs, cs))
    trs = [Node("tr", children=tuple(cells)) for cells in rows]
    sections = []
    if n_head:
        sections.append(Node("thead", children=tuple(trs[:n_head])))
    if n_rows > n_head or not n_head:
        sections.append(Node("tbody", children=tuple(trs[n_head:])))
    return TableTree(Node("table", children=tuple(sections)))


def random_sequence(rng: np.random.Generator, **kw) -> list[str]:
    return random_tree(rng, **kw).serialize()


def render(tree: TableTree, size: int = 32, normalize: bool = True) -> np.ndarray:
    """Draw cell borders (dark on white) with shaded header rows; [3, size, size].

    With ``normalize`` the image is mapped through (x - 0.5) / 0.5.
    """
    img = np.ones((3, size, size))
    grid = expand_grid(tree)
    n_head = sum(len(s.children) for s in tree.root.children if s.tag == "thead")
    if grid.rows and grid.cols:
        ys = np.linspace(1, size - 2, grid.rows + 1).round().astype(int)
        xs = np.linspace(1, size - 2, grid.cols + 1).round().astype(int)
        img[:, ys[0] : ys[min(n_head, grid.rows)], xs[0] : xs[-1]] = 0.75
        seen = set()
        for r in range(grid.rows):
            for c in range(grid.cols):
                cid = grid.occupancy[r][c]
                if cid is None or cid in seen:
                    continue
                seen.add(cid)
                r1 = r
                while r1 + 1 < grid.rows and grid.occupancy[r1 + 1][c] == cid:
                    r1 += 1
                c1 = c
                while c1 + 1 < grid.cols and grid.occupancy[r][c1 + 1] == cid:
                    c1 += 1
                t, b, l, rt = ys[r], ys[r1 + 1], xs[c], xs[c1 + 1]
                img[:, t, l : rt + 1] = 0.0
                img[:, b, l : rt + 1] = 0.0
                img[:, t : b + 1, l] = 0.0
                img[:, t : b + 1, rt] = 0.0
                # a dark "text" blob in the middle of the cell
                cy, cx = (t + b) // 2, (l + rt) // 2
                img[0, cy, cx] = 0.2
    return (img - 0.5) / 0.5 if normalize else img


def toy_dataset(n: int, seed: int = 0, size: int = 32, max_rows: int = 3, max_cols: int = 3) -> list[tuple[np.ndarray, TokenSequence]]:
    """``n`` distinct (image, <sos>...<eos> target) pairs."""
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    while len(out) < n:
        tree = random_tree(rng, max_rows=max_rows, max_cols=max_cols, span_prob=0.3, min_rows=1)
        key = tuple(tree.serialize())
        if key in seen:
            continue
        seen.add(key)
        out.append((render(tree, size), tokenize(key).with_specials()))
    return out
