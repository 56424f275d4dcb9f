"""Passive controller learning: a frequency prefix tree over (observation, action)
histories, folded by red-blue merging under a per-observation chi-square test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2 as _chi2

from .dataset import TrajectoryDataset
from .errors import ValidationError
from .model import Fsc

MIN_SAMPLES = 10
DEFAULT_ALPHA = 0.05


@dataclass
class FreqPrefixTree:
    """Nodes are integer ids; node 0 is the empty history.

    ``counts[v]`` maps an observation to its action-count vector and
    ``children[v]`` maps (z, a) to the child node.
    """

    num_observations: int
    num_actions: int
    counts: list[dict] = field(default_factory=list)
    children: list[dict] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)

    def add_node(self, depth: int) -> int:
        self.counts.append({})
        self.children.append({})
        self.depth.append(depth)
        return len(self.depth) - 1

    @property
    def num_nodes(self) -> int:
        return len(self.depth)

    def total_count(self) -> int:
        return int(sum(v.sum() for c in self.counts for v in c.values()))

    def count(self, node: int, z: int, a: int) -> int:
        vec = self.counts[node].get(z)
        return 0 if vec is None else int(vec[a])


def build_prefix_tree(data: TrajectoryDataset) -> FreqPrefixTree:
    tree = FreqPrefixTree(data.num_observations, data.num_actions)
    tree.add_node(0)
    A = data.num_actions
    for seq in data.sequences:
        v = 0
        for z, a in seq.tolist():
            vec = tree.counts[v].get(z)
            if vec is None:
                vec = tree.counts[v][z] = np.zeros(A, dtype=np.int64)
            vec[a] += 1
            nxt = tree.children[v].get((z, a))
            if nxt is None:
                nxt = tree.add_node(tree.depth[v] + 1)
                tree.children[v][(z, a)] = nxt
            v = nxt
    return tree


def chi2_statistic(c1, c2) -> tuple[float, int]:
    """Homogeneity statistic of the 2 x k table (c1; c2) over nonzero columns."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    col = c1 + c2
    keep = col > 0
    c1, c2, col = c1[keep], c2[keep], col[keep]
    n1, n2 = c1.sum(), c2.sum()
    df = col.size - 1
    if df < 1 or n1 == 0 or n2 == 0:
        return 0.0, max(df, 0)
    n = n1 + n2
    e1 = col * (n1 / n)
    e2 = col * (n2 / n)
    stat = float((((c1 - e1) ** 2) / e1).sum() + (((c2 - e2) ** 2) / e2).sum())
    return stat, df


def _as_table(counts) -> dict:
    if isinstance(counts, dict):
        return counts
    arr = np.asarray(counts)
    if arr.ndim == 1:
        return {0: arr}
    return {z: row for z, row in enumerate(arr)}


def _p_values(t1: dict, t2: dict, min_samples: int) -> list[float]:
    out = []
    for z, v1 in t1.items():
        v2 = t2.get(z)
        if v2 is None or v1.sum() < min_samples or v2.sum() < min_samples:
            continue
        stat, df = chi2_statistic(v1, v2)
        if df >= 1:
            out.append(float(_chi2.sf(stat, df)))
    return out


def chi2_compatible(counts1, counts2, alpha: float = DEFAULT_ALPHA, *, min_samples: int = MIN_SAMPLES) -> bool:
    """True unless some shared observation's action counts differ at level ``alpha``.

    ``counts`` is an action-count vector, a (Z, A) array or a dict z -> vector.
    Observations with fewer than ``min_samples`` visits on either side are not tested.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return all(p > alpha for p in _p_values(_as_table(counts1), _as_table(counts2), min_samples))


class _Merger:
    def __init__(self, tree: FreqPrefixTree, alpha: float, correction: str, min_samples: int):
        self.t = tree
        self.alpha = alpha
        self.correction = correction
        self.min_samples = min_samples
        if correction == "bonferroni":
            # one candidate check per testable cell of the unmerged tree, at most
            cells = sum(1 for c in tree.counts for v in c.values() if v.sum() >= min_samples)
            self.alpha = alpha / max(cells, 1)

    def compatible(self, r: int, b: int) -> bool:
        t = self.t
        stack = [(r, b)]
        pvals = []
        while stack:
            x, y = stack.pop()
            p = _p_values(t.counts[x], t.counts[y], self.min_samples)
            if self.correction == "none":
                if any(q <= self.alpha for q in p):
                    return False
            else:
                pvals.extend(p)
            cx = t.children[x]
            for key, yc in t.children[y].items():
                xc = cx.get(key)
                if xc is not None:
                    stack.append((xc, yc))
        if self.correction == "bonferroni" and pvals:
            return min(pvals) > self.alpha / len(pvals)
        return True

    def fold(self, r: int, b: int):
        t = self.t
        stack = [(r, b)]
        while stack:
            x, y = stack.pop()
            cx = t.counts[x]
            for z, vec in t.counts[y].items():
                if z in cx:
                    cx[z] = cx[z] + vec
                else:
                    cx[z] = vec.copy()
            kids = t.children[x]
            for key, yc in t.children[y].items():
                xc = kids.get(key)
                if xc is None:
                    kids[key] = yc
                else:
                    stack.append((xc, yc))

    def run(self) -> list[int]:
        t = self.t
        red = [0]
        red_set = {0}
        while True:
            blue = {c for r in red for c in t.children[r].values() if c not in red_set}
            if not blue:
                return red
            b = min(blue, key=lambda v: (t.depth[v], v))
            for r in red:
                if self.compatible(r, b):
                    # redirect every red edge into b, then fold b's subtree into r
                    for p in red:
                        for key, c in t.children[p].items():
                            if c == b:
                                t.children[p][key] = r
                    self.fold(r, b)
                    break
            else:
                red.append(b)
                red_set.add(b)


def merge_tree(tree: FreqPrefixTree, alpha: float = DEFAULT_ALPHA, *, correction: str = "bonferroni",
               min_samples: int = MIN_SAMPLES) -> list[int]:
    """Red-blue merge ``tree`` in place; returns the surviving (red) nodes, root first."""
    return _Merger(tree, alpha, correction, min_samples).run()


def run_alergia(data: TrajectoryDataset, alpha: float = DEFAULT_ALPHA, *, legal=None, correction: str = "bonferroni",
                min_samples: int = MIN_SAMPLES, fill: bool = True) -> Fsc:
    """Learn a combined-sigma controller from ``data``.

    With ``fill`` (default) every (n, z) the data never reached gets the pooled
    action frequencies of z over the whole dataset and keeps its node; an
    observation absent from the data plays uniformly over ``legal[z]`` (all
    actions if no mask is given). Without it those pairs stay undefined.
    Every merge check runs one chi-square test per shared observation at
    every node pair of the two subtrees. With ``correction="none"`` each of
    them is at level ``alpha``, which on 10^5-step datasets rejects true
    merges often enough to grow spurious nodes. The default ``"bonferroni"``
    rejects a check with m tests only when some p-value is below
    alpha / (m * K), K being the number of cells of the unmerged tree with at
    least ``min_samples`` visits.
    """
    if len(data) == 0 or data.total_steps == 0:
        raise ValidationError("cannot learn a controller from an empty dataset")
    if correction not in ("none", "bonferroni"):
        raise ValueError(f"unknown correction {correction!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    tree = build_prefix_tree(data)
    red = merge_tree(tree, alpha, correction=correction, min_samples=min_samples)
    index = {v: i for i, v in enumerate(red)}
    N, Z, A = len(red), data.num_observations, data.num_actions
    sigma = np.zeros((N, Z, N, A))
    for v in red:
        n = index[v]
        for z, vec in tree.counts[v].items():
            tot = vec.sum()
            if tot == 0:
                continue
            for a in np.flatnonzero(vec):
                child = tree.children[v][(z, int(a))]
                sigma[n, z, index[child], a] += vec[a] / tot
    if fill:
        pooled = np.zeros((Z, A))
        for seq in data.sequences:
            np.add.at(pooled, (seq[:, 0], seq[:, 1]), 1.0)
        for z in range(Z):
            if pooled[z].sum() > 0:
                dist = pooled[z] / pooled[z].sum()
            else:
                mask = np.ones(A) if legal is None else np.asarray(legal[z], dtype=np.float64)
                if mask.sum() == 0:
                    mask = np.ones(A)
                dist = mask / mask.sum()
            for n in range(N):
                if sigma[n, z].sum() == 0:
                    sigma[n, z, n] = dist
    return Fsc.from_sigma(sigma, 0)

