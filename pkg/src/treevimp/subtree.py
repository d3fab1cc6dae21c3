"""Maximal subtrees, random-path distributions and node mean squared error.

Per-terminal quantities (fitted values, true values, visit probabilities)
are plain float arrays indexed by ``label - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

from .tree import Dataset, Tree

TerminalValues = Union[np.ndarray, Mapping[int, float], Iterable[float]]


@dataclass(frozen=True)
class MaximalSubtree:
    """Subtree rooted at an internal node splitting on ``variable``.

    ``terminals`` are the labels reachable from ``root`` and ``depths`` the
    matching number of internal nodes from ``root`` (inclusive) down to each
    terminal, i.e. the number of coin flips a random path takes.
    """

    variable: int
    root: int
    terminals: np.ndarray
    depths: np.ndarray

    @property
    def masses(self) -> np.ndarray:
        return np.ldexp(1.0, -self.depths)


@dataclass(frozen=True)
class PathDistribution:
    labels: np.ndarray
    values: np.ndarray
    masses: np.ndarray

    @property
    def atoms(self) -> list[tuple[int, float, float]]:
        return [(int(m), float(v), float(p)) for m, v, p in zip(self.labels, self.values, self.masses)]


@dataclass(frozen=True)
class PairedSubtrees:
    kept_v: list[MaximalSubtree]
    kept_w: list[MaximalSubtree]
    dropped_v: list[MaximalSubtree]
    dropped_w: list[MaximalSubtree]

    @property
    def kept(self) -> list[MaximalSubtree]:
        return sorted(self.kept_v + self.kept_w, key=lambda s: s.root)

    @property
    def dropped(self) -> list[MaximalSubtree]:
        return self.dropped_v + self.dropped_w


def terminal_array(tree: Tree, values: TerminalValues, name: str = "values") -> np.ndarray:
    """Coerce per-terminal values to an array indexed by ``label - 1``.

    Mappings are keyed by label; absent labels become NaN so that coverage
    checks downstream can report them.
    """
    M = tree.num_terminals
    if isinstance(values, Mapping):
        out = np.full(M, np.nan)
        for m, val in values.items():
            if not 1 <= int(m) <= M:
                raise ValueError(f"{name}: terminal label {m} out of range 1..{M}")
            out[int(m) - 1] = val
        return out
    out = np.asarray(values, dtype=np.float64).reshape(-1)
    if out.shape[0] != M:
        raise ValueError(f"{name}: expected {M} terminal values, got {out.shape[0]}")
    return out


def _require(arr: np.ndarray, labels: np.ndarray, name: str) -> np.ndarray:
    sel = arr[labels - 1]
    if not np.isfinite(sel).all():
        missing = labels[~np.isfinite(sel)]
        raise ValueError(f"{name}: no value for terminal(s) {missing.tolist()}")
    return sel


def subtree_at(tree: Tree, root: int) -> MaximalSubtree:
    if tree.var[root] < 0:
        raise ValueError("a subtree root must be an internal node")
    labels, depths = [], []
    stack = [(root, 0)]
    while stack:
        nid, depth = stack.pop()
        if tree.var[nid] < 0:
            labels.append(int(tree.label[nid]))
            depths.append(depth)
        else:
            stack.append((int(tree.right[nid]), depth + 1))
            stack.append((int(tree.left[nid]), depth + 1))
    return MaximalSubtree(int(tree.var[root]), int(root), np.asarray(labels, np.int64), np.asarray(depths, np.int64))


def outermost_split_nodes(tree: Tree, variables: Iterable[int]) -> list[int]:
    """Internal nodes splitting on any of ``variables`` with no such ancestor (preorder)."""
    vs = set(int(v) for v in variables)
    found = []
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if tree.var[nid] < 0:
            continue
        if int(tree.var[nid]) in vs:
            found.append(nid)
            continue
        stack.append(int(tree.right[nid]))
        stack.append(int(tree.left[nid]))
    return found


def _check_var(tree: Tree, v: int):
    if not 0 <= v < tree.d:
        raise ValueError(f"variable index {v} out of range for d={tree.d}")


def maximal_subtrees(tree: Tree, v: int) -> list[MaximalSubtree]:
    """All maximal ``v``-subtrees of ``tree``, in preorder of their roots."""
    _check_var(tree, v)
    return [subtree_at(tree, nid) for nid in outermost_split_nodes(tree, [v])]


def _has_ancestor_on(tree: Tree, nid: int, w: int) -> bool:
    p = tree.parent[nid]
    while p >= 0:
        if tree.var[p] == w:
            return True
        p = tree.parent[p]
    return False


def paired_maximal_subtrees(tree: Tree, v: int, w: int) -> PairedSubtrees:
    """Split the maximal v- and w-subtrees into kept (outermost) and dropped (nested) sets.

    A maximal v-subtree whose root lies below any w split sits inside a
    maximal w-subtree and is dropped, and vice versa.
    """
    if v == w:
        raise ValueError("identical pair")
    _check_var(tree, v)
    _check_var(tree, w)
    kept_v, kept_w, dropped_v, dropped_w = [], [], [], []
    for st in maximal_subtrees(tree, v):
        (dropped_v if _has_ancestor_on(tree, st.root, w) else kept_v).append(st)
    for st in maximal_subtrees(tree, w):
        (dropped_w if _has_ancestor_on(tree, st.root, v) else kept_w).append(st)
    return PairedSubtrees(kept_v, kept_w, dropped_v, dropped_w)


def path_distribution(tree: Tree, subtree: MaximalSubtree, values: TerminalValues) -> PathDistribution:
    """Law of the terminal value reached by fair coin flips from the subtree root."""
    vals = _require(terminal_array(tree, values), subtree.terminals, "values")
    return PathDistribution(subtree.terminals.copy(), vals, subtree.masses)


def subtree_moments(pd: PathDistribution) -> tuple[float, float]:
    mean = float(np.dot(pd.masses, pd.values))
    dev = pd.values - mean
    return mean, float(np.dot(pd.masses, dev * dev))


def node_mse(subtree: MaximalSubtree, values0: np.ndarray, pi: np.ndarray) -> float:
    """Node mean squared error of a subtree.

    Sum over the subtree's terminals of ``pi_m * E(a0_random - a0_m)^2``,
    where ``a0_random`` is the random-path value over ``values0``.
    """
    v0 = _require(np.asarray(values0, np.float64), subtree.terminals, "values0")
    w = _require(np.asarray(pi, np.float64), subtree.terminals, "pi")
    masses = subtree.masses
    mean = np.dot(masses, v0)
    var = np.dot(masses, (v0 - mean) ** 2)
    return float(np.dot(w, var + (mean - v0) ** 2))


def estimate_pi(tree: Tree, sample) -> np.ndarray:
    """Empirical terminal-visit frequencies of ``sample`` (a Dataset or an (n, d) array)."""
    X = sample.X if isinstance(sample, Dataset) else np.asarray(sample, np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[0] == 0:
        raise ValueError("empty sample")
    labels = tree.label[tree.apply(X)]
    return np.bincount(labels - 1, minlength=tree.num_terminals) / X.shape[0]


def exact_pi_uniform(tree: Tree, box) -> np.ndarray:
    """Terminal-visit probabilities for ``x`` uniform on a box.

    ``box`` is a (d, 2) array of (low, high) bounds.  Each terminal gets the
    volume fraction of its cell intersected with the box.
    """
    box = np.asarray(box, dtype=np.float64)
    if box.shape != (tree.d, 2):
        raise ValueError(f"box must have shape ({tree.d}, 2)")
    if not (box[:, 1] > box[:, 0]).all():
        raise ValueError("degenerate box")
    width = box[:, 1] - box[:, 0]
    pi = np.zeros(tree.num_terminals)
    stack = [(tree.root, box[:, 0].copy(), box[:, 1].copy())]
    while stack:
        nid, lo, hi = stack.pop()
        if tree.var[nid] < 0:
            pi[tree.label[nid] - 1] = np.prod(np.clip(hi - lo, 0.0, None) / width)
            continue
        j, c = tree.var[nid], tree.cut[nid]
        lhi = hi.copy()
        lhi[j] = min(hi[j], c)
        rlo = lo.copy()
        rlo[j] = max(lo[j], c)
        stack.append((int(tree.right[nid]), rlo, hi))
        stack.append((int(tree.left[nid]), lo, lhi))
    return pi
