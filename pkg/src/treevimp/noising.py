"""Noised-up predictors: random left-right descent and its closed form.

Once a case meets a split on a noised variable it stops following its
covariates and walks to a terminal by fair coin flips.  The exact law of
that walk is the path distribution of the enclosing maximal subtree, which
gives closed-form conditional means and variances.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

import numpy as np

from . import _kernels
from .forest import Forest
from .subtree import (MaximalSubtree, PathDistribution, maximal_subtrees, paired_maximal_subtrees,
                      path_distribution, subtree_moments)
from .tree import Tree

# max coin words held in memory per sampling block
_BLOCK_WORDS = 1 << 22


class NoisingMode(Enum):
    FULL_RANDOM = "lr-random"
    SPLITS_ONLY = "lr-splits"


def normalize_vars(vars: Union[int, Iterable[int]], d: int) -> tuple[int, ...]:
    vs = (int(vars),) if np.isscalar(vars) else tuple(int(v) for v in vars)
    if len(vs) not in (1, 2):
        raise ValueError("noising supports one or two variables")
    if len(set(vs)) != len(vs):
        raise ValueError("identical pair")
    for v in vs:
        if not 0 <= v < d:
            raise ValueError(f"variable index {v} out of range for d={d}")
    return vs


@dataclass(frozen=True)
class NoisedPredictor:
    """Closed form of a tree noised up on one or two variables.

    ``region_of[m - 1]`` is the index of the randomized region containing
    terminal ``m`` (-1 outside all regions); each region keeps the path
    distribution of the tree's fitted values over it.
    """

    tree: Tree
    variables: tuple[int, ...]
    regions: list[MaximalSubtree]
    distributions: list[PathDistribution]
    region_of: np.ndarray
    region_mean: np.ndarray
    region_var: np.ndarray

    def moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Conditional mean and variance of the noised prediction at each row."""
        nodes = self.tree.apply(X)
        return self._moments_from_nodes(nodes)

    def _moments_from_nodes(self, nodes: np.ndarray):
        k = self.region_of[self.tree.label[nodes] - 1]
        inside = k >= 0
        mean = self.tree.value[nodes].copy()
        var = np.zeros(nodes.shape[0])
        mean[inside] = self.region_mean[k[inside]]
        var[inside] = self.region_var[k[inside]]
        return mean, var


def build_noised_predictor(tree: Tree, vars) -> NoisedPredictor:
    vs = normalize_vars(vars, tree.d)
    if len(vs) == 1:
        regions = maximal_subtrees(tree, vs[0])
    else:
        regions = paired_maximal_subtrees(tree, vs[0], vs[1]).kept
    fitted = tree.terminal_values
    region_of = np.full(tree.num_terminals, -1, np.int64)
    dists, means, variances = [], [], []
    for k, st in enumerate(regions):
        region_of[st.terminals - 1] = k
        pd = path_distribution(tree, st, fitted)
        mean, var = subtree_moments(pd)
        dists.append(pd)
        means.append(mean)
        variances.append(var)
    return NoisedPredictor(tree, vs, regions, dists, region_of,
                           np.asarray(means, np.float64), np.asarray(variances, np.float64))


def noised_moments_at(np_: NoisedPredictor, x) -> tuple[float, float]:
    mean, var = np_.moments(np.asarray(x, np.float64).reshape(1, -1))
    return float(mean[0]), float(var[0])


def _coin_words(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, np.iinfo(np.uint64).max, size=shape, dtype=np.uint64, endpoint=True)


def sample_terminal_nodes(tree: Tree, X, vars, mode: NoisingMode, rng: np.random.Generator,
                          replicates: int) -> np.ndarray:
    """Terminal node ids of ``replicates`` independent noised descents per row, shape (R, N)."""
    X, _ = tree._check_x(X)
    vs = normalize_vars(vars, tree.d)
    noised = np.zeros(tree.d, dtype=np.bool_)
    noised[list(vs)] = True
    splits_only = NoisingMode(mode) is NoisingMode.SPLITS_ONLY
    words = tree.max_depth // 64 + 1
    N = X.shape[0]
    block = max(1, _BLOCK_WORDS // max(1, N * words))
    out = np.empty((replicates, N), np.int64)
    for r0 in range(0, replicates, block):
        r1 = min(replicates, r0 + block)
        bits = _coin_words(rng, (r1 - r0, N, words))
        out[r0:r1] = _kernels.noised_walk_kernel(tree.var, tree.cut, tree.left, tree.right, tree.root,
                                                 X, noised, splits_only, bits)
    return out


def noised_predict_sample(tree: Tree, x, vars, mode: NoisingMode = NoisingMode.FULL_RANDOM,
                          rng: Optional[np.random.Generator] = None, size: Optional[int] = None):
    """One noised prediction at ``x`` (or ``size`` independent ones)."""
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, np.float64).reshape(1, -1)
    nodes = sample_terminal_nodes(tree, x, vars, mode, rng, 1 if size is None else size)[:, 0]
    vals = tree.value[nodes]
    return float(vals[0]) if size is None else vals


@dataclass(frozen=True)
class ForestNoisedPredictor:
    forest: Forest
    members: list[NoisedPredictor]

    def moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Mean of per-tree means and ``B**-2`` times the sum of per-tree variances."""
        nodes = self.forest.apply(X)
        B = self.forest.num_trees
        mean = np.zeros(nodes.shape[0])
        var = np.zeros(nodes.shape[0])
        for b, member in enumerate(self.members):
            m, v = member._moments_from_nodes(nodes[:, b])
            mean += m
            var += v
        return mean / B, var / (B * B)


def build_forest_noised_predictor(forest: Forest, vars) -> ForestNoisedPredictor:
    return ForestNoisedPredictor(forest, [build_noised_predictor(t, vars) for t in forest.trees])


def forest_noised_moments(fnp: ForestNoisedPredictor, x) -> tuple[float, float]:
    mean, var = fnp.moments(np.asarray(x, np.float64).reshape(1, -1))
    return float(mean[0]), float(var[0])


def forest_noised_sample(forest: Forest, X, vars, mode: NoisingMode, rng: np.random.Generator,
                         replicates: int) -> np.ndarray:
    """Noised forest predictions, shape (R, N); each tree uses its own coins."""
    X, _ = forest._check_x(X)
    acc = np.zeros((replicates, X.shape[0]))
    for t in forest.trees:
        acc += t.value[sample_terminal_nodes(t, X, vars, mode, rng, replicates)]
    return acc / forest.num_trees


def forest_noised_predict(forest: Forest, x, vars, mode: NoisingMode = NoisingMode.FULL_RANDOM,
                          rng: Optional[np.random.Generator] = None, size: Optional[int] = None):
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, np.float64).reshape(1, -1)
    vals = forest_noised_sample(forest, x, vars, mode, rng, 1 if size is None else size)[:, 0]
    return float(vals[0]) if size is None else vals
