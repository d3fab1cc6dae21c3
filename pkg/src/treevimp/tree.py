"""Binary regression trees: growing, evaluation and JSON storage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np

from . import _kernels


@dataclass
class Dataset:
    """Learning or test rows: response ``y`` and covariate matrix ``X`` (n, d)."""

    X: np.ndarray
    y: np.ndarray
    column_names: Optional[list[str]] = None
    response_name: str = "y"

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise ValueError("covariates must be an (n, d) array with d >= 1")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} covariate rows but {self.y.shape[0]} responses")
        if np.isnan(self.X).any():
            raise ValueError("missing covariate values; handle them at ingestion")
        if self.column_names is None:
            self.column_names = [f"x{j + 1}" for j in range(self.d)]
        self.column_names = list(self.column_names)
        if len(self.column_names) != self.d:
            raise ValueError("column_names must have one entry per covariate")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.column_names, self.response_name)

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class GrowConfig:
    min_node_size: int = 5
    max_depth: Optional[int] = None
    mtry: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass(eq=False)
class Tree:
    """A binary regression tree stored as parallel node arrays.

    Node ``i`` is terminal when ``var[i] < 0``; it then carries a label in
    ``1..M``, a fitted value and a training count.  Internal nodes send
    ``x[var] <= cut`` to ``left`` and everything else to ``right``.
    """

    d: int
    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    label: np.ndarray
    root: int = 0
    gain: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.var.shape[0]

    @cached_property
    def num_terminals(self) -> int:
        return int((self.var < 0).sum())

    @cached_property
    def terminal_ids(self) -> np.ndarray:
        """Node id of each terminal, indexed by ``label - 1``."""
        ids = np.empty(self.num_terminals, np.int64)
        leaves = np.flatnonzero(self.var < 0)
        ids[self.label[leaves] - 1] = leaves
        return ids

    @cached_property
    def terminal_values(self) -> np.ndarray:
        """Fitted values ``a_m`` indexed by ``label - 1``."""
        return self.value[self.terminal_ids].copy()

    @cached_property
    def parent(self) -> np.ndarray:
        parent = np.full(self.num_nodes, -1, np.int64)
        internal = np.flatnonzero(self.var >= 0)
        parent[self.left[internal]] = internal
        parent[self.right[internal]] = internal
        return parent

    @cached_property
    def max_depth(self) -> int:
        depth = np.zeros(self.num_nodes, np.int64)
        for nid in self.preorder():
            if self.var[nid] >= 0:
                depth[self.left[nid]] = depth[self.right[nid]] = depth[nid] + 1
        return int(depth.max())

    def is_terminal(self, nid: int) -> bool:
        return self.var[nid] < 0

    def preorder(self, start: Optional[int] = None):
        """Node ids reachable from ``start`` (default root), parents first, left before right."""
        stack = [self.root if start is None else start]
        while stack:
            nid = stack.pop()
            yield nid
            if self.var[nid] >= 0:
                stack.append(int(self.right[nid]))
                stack.append(int(self.left[nid]))

    def _check_x(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected covariate vectors of dimension {self.d}, got shape {X.shape}")
        return np.ascontiguousarray(X), single

    def apply(self, X) -> np.ndarray:
        """Terminal node ids for the rows of ``X``."""
        X, _ = self._check_x(X)
        return _kernels.apply_kernel(self.var, self.cut, self.left, self.right, self.root, X)

    def validate(self) -> "Tree":
        nn = self.num_nodes
        for name in ("cut", "left", "right", "value", "count", "label"):
            if getattr(self, name).shape != (nn,):
                raise ValueError(f"node array {name!r} has the wrong length")
        if not 0 <= self.root < nn:
            raise ValueError("root id out of range")
        internal = self.var >= 0
        if (self.var[internal] >= self.d).any():
            raise ValueError("split variable out of range")
        children = np.concatenate([self.left[internal], self.right[internal]])
        if (children < 0).any() or (children >= nn).any():
            raise ValueError("internal node with a missing child")
        if ((self.left[~internal] >= 0) | (self.right[~internal] >= 0)).any():
            raise ValueError("terminal node with children")
        n_parents = np.bincount(children, minlength=nn)
        if n_parents[self.root] != 0:
            raise ValueError("root has a parent")
        others = np.arange(nn) != self.root
        if (n_parents[others] != 1).any():
            raise ValueError("every non-root node needs exactly one parent")
        if sum(1 for _ in self.preorder()) != nn:
            raise ValueError("tree contains unreachable nodes")
        labels = np.sort(self.label[~internal])
        if not np.array_equal(labels, np.arange(1, labels.shape[0] + 1)):
            raise ValueError("terminal labels must be 1..M without gaps")
        if (self.label[internal] != -1).any():
            raise ValueError("internal nodes carry no label")
        return self

    def structurally_equal(self, other: "Tree") -> bool:
        return (
            self.d == other.d
            and self.root == other.root
            and all(
                np.array_equal(getattr(self, k), getattr(other, k), equal_nan=True)
                for k in ("var", "cut", "left", "right", "value", "count", "label")
            )
        )

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for i in range(self.num_nodes):
            if self.var[i] >= 0:
                nodes.append({"id": i, "kind": "internal", "var": int(self.var[i]), "cut": float(self.cut[i]),
                              "left": int(self.left[i]), "right": int(self.right[i])})
            else:
                nodes.append({"id": i, "kind": "terminal", "label": int(self.label[i]),
                              "value": float(self.value[i]), "count": int(self.count[i])})
        return {"d": int(self.d), "root": int(self.root), "nodes": nodes}

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "Tree":
        nodes = sorted(obj["nodes"], key=lambda nd: nd["id"])
        nn = len(nodes)
        if [nd["id"] for nd in nodes] != list(range(nn)):
            raise ValueError("node ids must be 0..N-1")
        var = np.full(nn, -1, np.int64)
        cut = np.zeros(nn)
        left = np.full(nn, -1, np.int64)
        right = np.full(nn, -1, np.int64)
        value = np.full(nn, np.nan)
        count = np.zeros(nn, np.int64)
        label = np.full(nn, -1, np.int64)
        for i, nd in enumerate(nodes):
            if nd["kind"] == "internal":
                var[i], cut[i], left[i], right[i] = nd["var"], nd["cut"], nd["left"], nd["right"]
            elif nd["kind"] == "terminal":
                label[i], value[i], count[i] = nd["label"], nd["value"], nd.get("count", 0)
            else:
                raise ValueError(f"unknown node kind {nd['kind']!r}")
        return cls(int(obj["d"]), var, cut, left, right, value, count, label, int(obj["root"])).validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Tree":
        return cls.from_dict(json.loads(text))


def _check_responses(data: Dataset):
    if data.n == 0:
        raise ValueError("empty learning data")
    if not np.isfinite(data.y).all():
        raise ValueError("invalid response")


def grow_tree(data: Dataset, config: GrowConfig = GrowConfig(), rng: Optional[np.random.Generator] = None) -> Tree:
    """Grow a CART regression tree by greedy SSE reduction.

    A node becomes terminal when it has fewer than ``2 * min_node_size``
    rows, its responses are all equal, it sits at ``max_depth``, or no cut
    at an observed value reduces the SSE while leaving ``min_node_size``
    rows per side.  With ``mtry`` set, each node draws its candidate
    variables without replacement from ``rng`` (default: seeded from
    ``config.seed``).
    """
    _check_responses(data)
    mtry = data.d if config.mtry is None else config.mtry
    if mtry > data.d:
        raise ValueError(f"mtry={mtry} exceeds d={data.d}")
    if mtry < data.d:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        keys = rng.random((2 * data.n + 1, data.d))
    else:
        keys = np.empty((0, data.d))
    max_depth = -1 if config.max_depth is None else config.max_depth
    var, cut, left, right, value, count, label, gain = _kernels.grow_kernel(
        data.X, data.y, config.min_node_size, max_depth, mtry, keys)
    internal = var >= 0
    value[internal] = np.nan
    count[internal] = 0
    return Tree(data.d, var, cut, left, right, value, count, label, 0, gain)


def best_split(data: Dataset, candidate_vars: Optional[Sequence[int]] = None, min_node_size: int = 1):
    """Best ``(var, cut, sse_reduction)`` for the rows of ``data``, or ``None``.

    Uses the same search as :func:`grow_tree`.
    """
    if data.n == 0:
        raise ValueError("empty learning data")
    cand = np.arange(data.d) if candidate_vars is None else np.asarray(sorted(set(candidate_vars)), np.int64)
    if cand.size and (cand.min() < 0 or cand.max() >= data.d):
        raise ValueError("candidate variable out of range")
    rows = np.arange(data.n)
    mean = data.y.mean()
    var, cut, gain = _kernels.split_search(data.X, data.y, rows, cand, min_node_size, mean,
                                           np.empty(data.n), np.empty(data.n))
    if var < 0:
        return None
    return int(var), float(cut), float(gain)


def node_membership(tree: Tree, x):
    """Terminal label(s) reached by ``x`` (a vector or a matrix of rows)."""
    X, single = tree._check_x(x)
    labels = tree.label[_kernels.apply_kernel(tree.var, tree.cut, tree.left, tree.right, tree.root, X)]
    return int(labels[0]) if single else labels


def predict(tree: Tree, x):
    X, single = tree._check_x(x)
    out = tree.value[_kernels.apply_kernel(tree.var, tree.cut, tree.left, tree.right, tree.root, X)]
    return float(out[0]) if single else out


def rectangle_indicator_tree(cuts: Sequence[float]) -> Tree:
    """Chain tree whose prediction is ``1{x_1 <= c_1, ..., x_d <= c_d}``.

    The root splits ``x_1`` at ``c_1``, its left child splits ``x_2`` at
    ``c_2`` and so on.  Label 1 is the all-conditions terminal (value 1);
    label ``k + 1`` is the terminal reached by failing condition ``k`` after
    passing the earlier ones (value 0).  The tree has ``d + 1`` terminals.
    """
    cuts = np.asarray(cuts, dtype=np.float64).reshape(-1)
    d = cuts.shape[0]
    if d == 0:
        raise ValueError("rectangle needs at least one cut")
    nn = 2 * d + 1
    var = np.full(nn, -1, np.int64)
    cut = np.zeros(nn)
    left = np.full(nn, -1, np.int64)
    right = np.full(nn, -1, np.int64)
    value = np.zeros(nn)
    count = np.zeros(nn, np.int64)
    label = np.full(nn, -1, np.int64)
    for k in range(d):
        node = 2 * k
        var[node] = k
        cut[node] = cuts[k]
        left[node] = 2 * (k + 1)
        right[node] = node + 1
        label[node + 1] = k + 2
    value[2 * d] = 1.0
    label[2 * d] = 1
    value[var >= 0] = np.nan
    return Tree(d, var, cut, left, right, value, count, label, 0).validate()


def tree_from_nested(d: int, spec) -> Tree:
    """Build a tree from nested tuples, labelling terminals left to right.

    ``spec`` is either a terminal value (a number or ``("leaf", value[, count])``)
    or ``("split", var, cut, left_spec, right_spec)``.  Handy for hand-made trees.
    """
    var, cut, left, right, value, count = [], [], [], [], [], []

    def build(node) -> int:
        nid = len(var)
        for arr, default in ((var, -1), (cut, 0.0), (left, -1), (right, -1), (value, np.nan), (count, 0)):
            arr.append(default)
        if isinstance(node, tuple) and node[0] == "split":
            _, v, c, lspec, rspec = node
            var[nid], cut[nid] = v, c
            left[nid] = build(lspec)
            right[nid] = build(rspec)
        elif isinstance(node, tuple) and node[0] == "leaf":
            value[nid] = node[1]
            count[nid] = node[2] if len(node) > 2 else 0
        else:
            value[nid] = float(node)
        return nid

    build(spec)
    left_a = np.asarray(left, np.int64)
    right_a = np.asarray(right, np.int64)
    label = _kernels.label_terminals(left_a, right_a, 0)
    return Tree(d, np.asarray(var, np.int64), np.asarray(cut, np.float64), left_a, right_a,
                np.asarray(value, np.float64), np.asarray(count, np.int64), label, 0).validate()
