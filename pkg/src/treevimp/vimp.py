"""Prediction error, variable importance and pairwise association.

Every importance value here is conditional on the fitted model and on the
supplied test sample: ``delta = MSE(noised) - MSE(model)`` on the same rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .forest import Forest
from .noising import (ForestNoisedPredictor, NoisedPredictor, NoisingMode, build_forest_noised_predictor,
                      build_noised_predictor, forest_noised_sample, normalize_vars, sample_terminal_nodes)
from .subtree import (estimate_pi, maximal_subtrees, node_mse, outermost_split_nodes, paired_maximal_subtrees,
                      subtree_at, terminal_array)
from .tree import Dataset, Tree

Model = Union[Tree, Forest]


class Method(Enum):
    EXACT_CONDITIONAL = "exact"
    MONTE_CARLO = "monte-carlo"
    THEOREM_FORMULA = "formula"
    LIMIT = "limit"
    PERMUTATION_PROXY = "permutation"


@dataclass(frozen=True)
class VimpResult:
    delta: float
    method: Method
    std_error: Optional[float] = None

    def __post_init__(self):
        sampled = self.method in (Method.MONTE_CARLO, Method.PERMUTATION_PROXY)
        if sampled != (self.std_error is not None):
            raise ValueError("std_error is reported exactly for sampled methods")

    def to_dict(self):
        return {"delta": self.delta, "std_error": self.std_error, "method": self.method.value}


@dataclass(frozen=True)
class AssociationResult:
    paired: float
    additive: float
    association: float
    standardized: float


@dataclass(frozen=True)
class SignalSpec:
    """Where the true terminal values come from.

    Use :meth:`fitted`, :meth:`explicit` or :meth:`true_function`.
    """

    kind: str
    values: object = None

    @classmethod
    def fitted(cls) -> "SignalSpec":
        return cls("fitted")

    @classmethod
    def explicit(cls, values) -> "SignalSpec":
        """``values``: one per-terminal array (single tree), a list of them (one
        per tree), or a mapping ``(tree_id, label) -> value``."""
        return cls("explicit", values)

    @classmethod
    def true_function(cls, fn: Callable[[np.ndarray], np.ndarray]) -> "SignalSpec":
        """A vectorized regression function; terminal values are its sample means per cell."""
        return cls("true_function", fn)

    def terminal_values(self, tree: Tree, tree_id: int = 0, sample=None) -> np.ndarray:
        if self.kind == "fitted":
            return tree.terminal_values
        if self.kind == "explicit":
            vals = self.values
            if isinstance(vals, Mapping):
                out = np.full(tree.num_terminals, np.nan)
                for (b, m), val in vals.items():
                    if b == tree_id:
                        out[m - 1] = val
                return out
            if isinstance(vals, (list, tuple)) and len(vals) and np.ndim(vals[0]) == 1:
                return terminal_array(tree, vals[tree_id], "signal")
            return terminal_array(tree, vals, "signal")
        if self.kind == "true_function":
            if sample is None:
                raise ValueError("a true-function signal needs a sample to average over")
            X = sample.X if isinstance(sample, Dataset) else np.asarray(sample, np.float64)
            mu = np.asarray(self.values(X), np.float64)
            labels = tree.label[tree.apply(X)] - 1
            sums = np.bincount(labels, weights=mu, minlength=tree.num_terminals)
            counts = np.bincount(labels, minlength=tree.num_terminals)
            # unvisited cells have zero weight wherever sample-based pi is used
            return np.where(counts > 0, sums / np.maximum(counts, 1), tree.terminal_values)
        raise ValueError(f"unknown signal kind {self.kind!r}")


def _check_test(test: Dataset):
    if test.n == 0:
        raise ValueError("empty test set")


def mse(predictor, test: Dataset) -> float:
    """Test mean squared error.

    Noised predictors are integrated exactly: each row contributes
    ``(y - mean)^2 + variance`` of its noised prediction.
    """
    _check_test(test)
    if isinstance(predictor, (NoisedPredictor, ForestNoisedPredictor)):
        mean, var = predictor.moments(test.X)
        return float(np.mean((test.y - mean) ** 2 + var))
    if isinstance(predictor, (Tree, Forest)):
        pred = predictor.value[predictor.apply(test.X)] if isinstance(predictor, Tree) else predictor.predict(test.X)
    else:
        pred = np.asarray(predictor(test.X), np.float64)
    return float(np.mean((test.y - pred) ** 2))


def _noised(model: Model, vars):
    if isinstance(model, Forest):
        return build_forest_noised_predictor(model, vars)
    return build_noised_predictor(model, vars)


def delta_exact(model: Model, vars, test: Dataset) -> VimpResult:
    _check_test(test)
    normalize_vars(vars, model.d)
    noised = _noised(model, vars)
    return VimpResult(mse(noised, test) - mse(model, test), Method.EXACT_CONDITIONAL)


def delta_mc(model: Model, vars, test: Dataset, replicates: int,
             mode: NoisingMode = NoisingMode.FULL_RANDOM, rng: Optional[np.random.Generator] = None) -> VimpResult:
    """Monte Carlo importance: replicate-mean of sampled noised MSE minus model MSE."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    _check_test(test)
    rng = np.random.default_rng() if rng is None else rng
    base = mse(model, test)
    if isinstance(model, Forest):
        preds = forest_noised_sample(model, test.X, vars, mode, rng, replicates)
    else:
        preds = model.value[sample_terminal_nodes(model, test.X, vars, mode, rng, replicates)]
    diffs = np.mean((test.y[None, :] - preds) ** 2, axis=1) - base
    return VimpResult(float(diffs.mean()), Method.MONTE_CARLO, _std_error(diffs))


def _std_error(samples: np.ndarray) -> float:
    if samples.shape[0] < 2:
        return 0.0
    return float(samples.std(ddof=1) / np.sqrt(samples.shape[0]))


def _regions(tree: Tree, vars):
    vs = normalize_vars(vars, tree.d)
    if len(vs) == 1:
        return maximal_subtrees(tree, vs[0])
    return paired_maximal_subtrees(tree, vs[0], vs[1]).kept


def delta_formula(tree: Tree, vars, signal: SignalSpec, pi, sample=None) -> VimpResult:
    """Importance from the subtree moments of the fitted values and the true values.

    Sum over regions k and their terminals m of
    ``pi_m * [s2_k + (abar_k - a_m) * (abar_k + a_m - 2 * a0_m)]``.
    """
    a = tree.terminal_values
    a0 = terminal_array(tree, signal.terminal_values(tree, 0, sample), "signal")
    w = terminal_array(tree, pi, "pi")
    total = 0.0
    for st in _regions(tree, vars):
        labels = st.terminals - 1
        if not (np.isfinite(a0[labels]).all() and np.isfinite(w[labels]).all()):
            raise ValueError("signal and pi must cover every terminal of the subtree")
        masses = st.masses
        am = a[labels]
        abar = np.dot(masses, am)
        s2 = np.dot(masses, (am - abar) ** 2)
        total += float(np.dot(w[labels], s2 + (abar - am) * (abar + am - 2.0 * a0[labels])))
    return VimpResult(total, Method.THEOREM_FORMULA)


def delta_limit(tree: Tree, vars, values0, pi) -> VimpResult:
    """Sum of node mean squared errors over the noised regions."""
    v0 = terminal_array(tree, values0, "values0")
    w = terminal_array(tree, pi, "pi")
    return VimpResult(sum(node_mse(st, v0, w) for st in _regions(tree, vars)), Method.LIMIT)


def association(model: Model, v: int, w: int, test: Dataset,
                reference_mse: Optional[float] = None) -> AssociationResult:
    if v == w:
        raise ValueError("identical pair")
    paired = delta_exact(model, (v, w), test).delta
    additive = delta_exact(model, v, test).delta + delta_exact(model, w, test).delta
    assoc = paired - additive
    std = assoc / reference_mse * 100.0 if reference_mse else float("nan")
    return AssociationResult(paired, additive, assoc, std)


def association_limit(tree: Tree, v: int, w: int, values0, pi) -> float:
    """Minus the node mean squared error of the nested (double-counted) subtrees."""
    if v == w:
        raise ValueError("identical pair")
    v0 = terminal_array(tree, values0, "values0")
    wts = terminal_array(tree, pi, "pi")
    pairs = paired_maximal_subtrees(tree, v, w)
    return -sum(node_mse(st, v0, wts) for st in pairs.dropped)


def kept_regions_direct(tree: Tree, v: int, w: int):
    """Outermost subtrees for the pair found in one pass, without the pairing bookkeeping."""
    return [subtree_at(tree, nid) for nid in outermost_split_nodes(tree, (v, w))]


@dataclass(frozen=True)
class LimitQuantities:
    r_squared: float
    jensen_bound: float


def _per_tree(values, forest: Forest, name: str, default):
    if values is None:
        return [default(t) for t in forest.trees]
    if len(values) != forest.num_trees:
        raise ValueError(f"{name}: need one entry per tree")
    return [terminal_array(t, val, name) for t, val in zip(forest.trees, values)]


def forest_limit_quantities(forest: Forest, vars, sample, values0: Optional[Sequence] = None,
                            pi: Optional[Sequence] = None) -> LimitQuantities:
    """Limit importance of a forest and its Jensen upper bound.

    ``r_squared`` averages ``E(R0(x)^2)`` over the sample rows, with
    ``R0(x) = B^-1 sum_b (random path value - a0_m)`` over the trees whose
    noised region holds ``x``; the coins of different trees are independent,
    so per row this is the squared mean plus ``B^-2`` times the summed
    variances.  ``jensen_bound`` is ``B^-1`` times the summed node mean
    squared errors.  ``values0`` defaults to fitted values and ``pi`` to the
    sample's visit frequencies, which makes the bound hold exactly.
    """
    X = sample.X if isinstance(sample, Dataset) else np.asarray(sample, np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty sample")
    B = forest.num_trees
    v0s = _per_tree(values0, forest, "values0", lambda t: t.terminal_values)
    pis = _per_tree(pi, forest, "pi", lambda t: estimate_pi(t, X))
    nodes = forest.apply(X)
    mean = np.zeros(X.shape[0])
    var = np.zeros(X.shape[0])
    bound = 0.0
    for b, t in enumerate(forest.trees):
        v0, wts = v0s[b], pis[b]
        region_mean = np.full(t.num_terminals, np.nan)
        region_var = np.zeros(t.num_terminals)
        inside = np.zeros(t.num_terminals, dtype=bool)
        for st in _regions(t, vars):
            labels = st.terminals - 1
            masses = st.masses
            m0 = np.dot(masses, v0[labels])
            region_mean[labels] = m0
            region_var[labels] = np.dot(masses, (v0[labels] - m0) ** 2)
            inside[labels] = True
            bound += node_mse(st, v0, wts)
        lab = t.label[nodes[:, b]] - 1
        hit = inside[lab]
        mean[hit] += region_mean[lab[hit]] - v0[lab[hit]]
        var[hit] += region_var[lab[hit]]
    r2 = float(np.mean((mean / B) ** 2 + var / (B * B)))
    return LimitQuantities(r2, bound / B)


def forest_association_limit(forest: Forest, v: int, w: int, sample, values0=None) -> float:
    """Limit forest association: paired limit minus the two single limits."""
    if v == w:
        raise ValueError("identical pair")
    r = lambda vars: forest_limit_quantities(forest, vars, sample, values0).r_squared  # noqa: E731
    return r((v, w)) - r(v) - r(w)


def permuted_mse_gains(forest: Forest, test: Dataset, var_sets: Sequence[tuple[int, ...]],
                       rng: np.random.Generator) -> np.ndarray:
    """MSE increase from one fresh column permutation per variable, for each var set.

    All permuted copies go through the forest in one batch.  Permutations are
    drawn in ``var_sets`` order, one per variable.
    """
    n = test.n
    base_pred = forest.predict(test.X)
    base = np.mean((test.y - base_pred) ** 2)
    stacked = np.empty((len(var_sets) * n, test.d))
    for s, vs in enumerate(var_sets):
        block = test.X.copy()
        for v in vs:
            block[:, v] = test.X[rng.permutation(n), v]
        stacked[s * n:(s + 1) * n] = block
    pred = forest.predict(stacked).reshape(len(var_sets), n)
    return np.mean((test.y[None, :] - pred) ** 2, axis=1) - base


def permutation_vimp(forest: Forest, test: Dataset, vars, replicates: int,
                     rng: Optional[np.random.Generator] = None) -> VimpResult:
    """Permutation proxy: average MSE increase after permuting the columns in ``vars``."""
    if test.n < 2:
        raise ValueError("permutation importance needs at least 2 test rows")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    vs = normalize_vars(vars, forest.d)
    rng = np.random.default_rng() if rng is None else rng
    diffs = permuted_mse_gains(forest, test, [vs] * replicates, rng)
    return VimpResult(float(diffs.mean()), Method.PERMUTATION_PROXY, _std_error(diffs))
