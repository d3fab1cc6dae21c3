"""Tree ensembles with optional bootstrap and out-of-bag error."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Any, Optional

import numpy as np

from . import _kernels
from .tree import Dataset, Tree, _check_responses


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 500
    mtry: Optional[int] = None
    bootstrap: bool = True
    min_node_size: int = 5
    seed: int = 0
    max_depth: Optional[int] = None

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")


def tree_rng(seed: int, b: int) -> np.random.Generator:
    """Random stream of tree ``b``: PCG64 over ``SeedSequence(seed, spawn_key=(b,))``.

    This is the stream ``SeedSequence(seed).spawn(...)[b]`` would give, so
    trees can be grown in any order or in parallel.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b,))))


@dataclass(eq=False)
class Forest:
    trees: list[Tree]
    inbag: list[np.ndarray]
    config: ForestConfig
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.trees:
            raise ValueError("empty forest")
        if len({t.d for t in self.trees}) != 1:
            raise ValueError("trees disagree on the covariate dimension")

    @property
    def d(self) -> int:
        return self.trees[0].d

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def packed(self):
        """Concatenated node arrays with global child ids, plus each tree's root id."""
        sizes = np.array([t.num_nodes for t in self.trees], np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        var = np.concatenate([t.var for t in self.trees])
        cut = np.concatenate([t.cut for t in self.trees])
        value = np.concatenate([t.value for t in self.trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)])
        right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)])
        roots = np.array([t.root + o for t, o in zip(self.trees, offsets)], np.int64)
        return var, cut, left, right, value, roots, offsets

    def _check_x(self, X):
        return self.trees[0]._check_x(X)

    def predict(self, X) -> np.ndarray:
        X, _ = self._check_x(X)
        var, cut, left, right, value, roots, _ = self.packed
        return _kernels.forest_predict_kernel(var, cut, left, right, value, roots, X)

    def apply(self, X) -> np.ndarray:
        """Per-tree terminal node ids (local to each tree), shape (rows, trees)."""
        X, _ = self._check_x(X)
        var, cut, left, right, _, roots, offsets = self.packed
        return _kernels.forest_apply_kernel(var, cut, left, right, roots, X) - offsets[None, :]

    def oob_mask(self, n: int) -> np.ndarray:
        """Boolean (n, B) matrix: row i is out of bag for tree b."""
        if not self.config.bootstrap:
            raise ValueError("no out-of-bag data")
        mask = np.ones((n, self.num_trees), dtype=bool)
        for b, idx in enumerate(self.inbag):
            mask[idx, b] = False
        return mask

    def to_dict(self) -> dict[str, Any]:
        out = {
            "config": asdict(self.config),
            "trees": [t.to_dict() for t in self.trees],
            "inbag": [idx.tolist() for idx in self.inbag],
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "Forest":
        config = ForestConfig(**obj["config"])
        trees = [Tree.from_dict(t) for t in obj["trees"]]
        inbag = [np.asarray(idx, np.int64) for idx in obj.get("inbag", [])]
        if not inbag:
            inbag = [np.empty(0, np.int64) for _ in trees]
        extra = {k: v for k, v in obj.items() if k not in ("config", "trees", "inbag")}
        return cls(trees, inbag, config, extra)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))


def _grow_one(X, y, config: ForestConfig, mtry: int, b: int):
    rng = tree_rng(config.seed, b)
    n, d = X.shape
    if config.bootstrap:
        idx = rng.integers(0, n, size=n)
        Xb, yb = np.ascontiguousarray(X[idx]), y[idx]
    else:
        idx = np.empty(0, np.int64)
        Xb, yb = X, y
    keys = rng.random((2 * n + 1, d)) if mtry < d else np.empty((0, d))
    max_depth = -1 if config.max_depth is None else config.max_depth
    var, cut, left, right, value, count, label, gain = _kernels.grow_kernel(
        Xb, yb, config.min_node_size, max_depth, mtry, keys)
    internal = var >= 0
    value[internal] = np.nan
    count[internal] = 0
    return Tree(d, var, cut, left, right, value, count, label, 0, gain), idx


def grow_forest(data: Dataset, config: ForestConfig, threads: int = 1) -> Forest:
    """Grow ``config.num_trees`` trees, each from its own :func:`tree_rng` stream.

    With bootstrap on, tree ``b`` first draws ``n`` row indices with
    replacement from its stream, then grows on that resample.
    """
    _check_responses(data)
    mtry = data.d if config.mtry is None else config.mtry
    if mtry > data.d:
        raise ValueError(f"mtry={mtry} exceeds d={data.d}")
    work = lambda b: _grow_one(data.X, data.y, config, mtry, b)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            grown = list(pool.map(work, range(config.num_trees)))
    else:
        grown = [work(b) for b in range(config.num_trees)]
    return Forest([t for t, _ in grown], [i for _, i in grown], config)


def forest_predict(forest: Forest, x):
    X, single = forest._check_x(x)
    out = forest.predict(X)
    return float(out[0]) if single else out


def oob_mse(forest: Forest, data: Dataset) -> tuple[float, int]:
    """Out-of-bag MSE and the number of rows that were in bag for every tree.

    Each row is predicted by the average of the trees for which it is out
    of bag; rows without such a tree are skipped and counted.
    """
    mask = forest.oob_mask(data.n)
    nodes = forest.apply(data.X)
    vals = np.empty(nodes.shape)
    for b, t in enumerate(forest.trees):
        vals[:, b] = t.value[nodes[:, b]]
    k = mask.sum(axis=1)
    ok = k > 0
    if not ok.any():
        raise ValueError("no out-of-bag data")
    pred = np.where(mask, vals, 0.0).sum(axis=1)[ok] / k[ok]
    return float(np.mean((data.y[ok] - pred) ** 2)), int((~ok).sum())
