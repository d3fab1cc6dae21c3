import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import forest_of, interleaved_tree
from treevimp.forest import ForestConfig, grow_forest
from treevimp.noising import NoisingMode, build_noised_predictor
from treevimp.subtree import estimate_pi, maximal_subtrees, node_mse, paired_maximal_subtrees, path_distribution
from treevimp.tree import Dataset, GrowConfig, grow_tree, tree_from_nested
from treevimp.vimp import (Method, SignalSpec, VimpResult, association, association_limit, delta_exact,
                           delta_formula, delta_limit, delta_mc, forest_association_limit,
                           forest_limit_quantities, kept_regions_direct, mse, permutation_vimp)

THIRD = np.full(3, 1 / 3)


def three_point_test():
    # one point per terminal of the 3-leaf tree, Y equal to the fitted value
    return Dataset(np.array([[0.1, 0.1], [0.9, 0.1], [0.9, 0.9]]), np.array([0.0, 2.0, 4.0]))


def grown(seed, n=120, d=4, min_node=3):
    r = np.random.default_rng(seed)
    X = r.random((n, d))
    y = 3 * np.sin(3 * X[:, 0] * X[:, 1]) + X[:, 2] + r.normal(size=n)
    return grow_tree(Dataset(X, y), GrowConfig(min_node_size=min_node)), X, y


class TestMse:
    def test_interpolating_tree(self, rng):
        X = rng.random((40, 2))
        y = rng.normal(size=40)
        assert mse(grow_tree(Dataset(X, y), GrowConfig(min_node_size=1)), Dataset(X, y)) == 0.0

    def test_constant_predictor(self):
        test = Dataset(np.zeros((2, 1)), np.array([1.0, 3.0]))
        assert mse(lambda X: np.full(len(X), 2.0), test) == 1.0

    def test_noised_predictor(self, three_leaf_tree):
        npred = build_noised_predictor(three_leaf_tree, 0)
        assert mse(npred, Dataset(np.array([[0.9, 0.9]]), np.array([2.0]))) == 3.0

    def test_empty(self, three_leaf_tree):
        with pytest.raises(ValueError, match="empty test set"):
            mse(three_leaf_tree, Dataset(np.empty((0, 2)), np.empty(0)))


class TestDelta:
    def test_unused_is_zero(self, three_leaf_tree, rng):
        tree = tree_from_nested(3, ("split", 0, 0.5, 1.0, 2.0))
        test = Dataset(rng.random((10, 3)), rng.normal(size=10))
        assert delta_exact(tree, 2, test).delta == 0.0
        res = delta_mc(tree, 2, test, 50, rng=rng)
        assert res.delta == 0.0 and res.std_error == 0.0

    def test_equal_region_values(self, rng):
        tree = tree_from_nested(2, ("split", 1, 0.5, 0.0, ("split", 0, 0.5, 3.0, 3.0)))
        test = Dataset(rng.random((10, 2)), rng.normal(size=10))
        assert delta_exact(tree, 0, test).delta == 0.0

    def test_three_terminal_example(self, three_leaf_tree):
        res = delta_exact(three_leaf_tree, 0, three_point_test())
        assert res.method is Method.EXACT_CONDITIONAL and res.std_error is None
        assert res.delta == pytest.approx(17 / 3, rel=1e-14)

    def test_mc_matches_exact(self, three_leaf_tree, rng):
        exact = delta_exact(three_leaf_tree, 0, three_point_test()).delta
        res = delta_mc(three_leaf_tree, 0, three_point_test(), 100_000, rng=rng)
        assert abs(res.delta - exact) < 4 * res.std_error

    def test_mc_splits_only_consistency(self, rng):
        tree, X, y = grown(2)
        test = Dataset(X[:30], y[:30])
        a = delta_mc(tree, 0, test, 400, NoisingMode.SPLITS_ONLY, np.random.default_rng(1))
        b = delta_mc(tree, 0, test, 6400, NoisingMode.SPLITS_ONLY, np.random.default_rng(2))
        assert b.std_error < a.std_error
        assert abs(a.delta - b.delta) < 4 * np.hypot(a.std_error, b.std_error)

    def test_mc_rejects_zero_replicates(self, three_leaf_tree):
        with pytest.raises(ValueError):
            delta_mc(three_leaf_tree, 0, three_point_test(), 0)

    def test_formula_and_limit_hand_value(self, three_leaf_tree):
        assert delta_formula(three_leaf_tree, 0, SignalSpec.fitted(), THIRD).delta == pytest.approx(17 / 3)
        assert delta_limit(three_leaf_tree, 0, three_leaf_tree.terminal_values, THIRD).delta == pytest.approx(17 / 3)
        assert delta_limit(three_leaf_tree, 1, three_leaf_tree.terminal_values, THIRD).delta == pytest.approx(4 / 3)

    def test_formula_coverage(self, three_leaf_tree):
        with pytest.raises(ValueError):
            delta_formula(three_leaf_tree, 0, SignalSpec.explicit({(0, 1): 0.0}), THIRD)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_fitted_limit_identity(self, seed):
        tree, X, _ = grown(seed % 10_000)
        pi = np.random.default_rng(seed).dirichlet(np.ones(tree.num_terminals))
        for v in range(tree.d):
            f = delta_formula(tree, v, SignalSpec.fitted(), pi).delta
            lim = delta_limit(tree, v, tree.terminal_values, pi).delta
            assert abs(f - lim) / (1 + abs(lim)) < 1e-10
            assert lim >= 0

    def test_conditional_formula_identity(self, rng):
        # with pi and a0 taken from the test rows, the formula reproduces the exact conditional delta
        tree, _, _ = grown(7)
        X = rng.random((300, 4))
        test = Dataset(X, 3 * np.sin(3 * X[:, 0] * X[:, 1]) + rng.normal(size=300))
        labels = tree.label[tree.apply(X)] - 1
        counts = np.bincount(labels, minlength=tree.num_terminals)
        cell_mean = np.bincount(labels, test.y, tree.num_terminals) / np.maximum(counts, 1)
        a0 = np.where(counts > 0, cell_mean, 0.0)
        pi = estimate_pi(tree, test)
        for v in range(4):
            want = delta_exact(tree, v, test).delta
            got = delta_formula(tree, v, SignalSpec.explicit(a0), pi).delta
            assert got == pytest.approx(want, rel=1e-10, abs=1e-10)

    def test_true_function_signal(self, rng):
        tree, _, _ = grown(8)
        X = rng.random((500, 4))
        fn = lambda Z: 3 * np.sin(3 * Z[:, 0] * Z[:, 1]) + Z[:, 2]  # noqa: E731
        a0 = SignalSpec.true_function(fn).terminal_values(tree, 0, X)
        direct = delta_formula(tree, 0, SignalSpec.explicit(a0), estimate_pi(tree, X)).delta
        assert delta_formula(tree, 0, SignalSpec.true_function(fn), estimate_pi(tree, X), X).delta == direct
        with pytest.raises(ValueError):
            SignalSpec.true_function(fn).terminal_values(tree)


class TestVimpResult:
    def test_std_error_presence(self):
        with pytest.raises(ValueError):
            VimpResult(1.0, Method.MONTE_CARLO)
        with pytest.raises(ValueError):
            VimpResult(1.0, Method.LIMIT, 0.1)
        assert VimpResult(1.0, Method.PERMUTATION_PROXY, 0.5).to_dict() == {
            "delta": 1.0, "std_error": 0.5, "method": "permutation"}


class TestAssociation:
    def test_orthogonal_single_tree(self, rng):
        tree = tree_from_nested(3, ("split", 2, 0.5, ("split", 0, 0.5, 1.0, 5.0), ("split", 1, 0.5, -2.0, 3.0)))
        X = rng.random((200, 3))
        res = association(tree, 0, 1, Dataset(X, rng.normal(size=200)), reference_mse=2.0)
        assert abs(res.association) < 1e-10
        assert res.standardized == pytest.approx(res.association / 2.0 * 100)
        assert np.isnan(association(tree, 0, 1, Dataset(X, rng.normal(size=200))).standardized)
        assert association_limit(tree, 0, 1, tree.terminal_values, estimate_pi(tree, X)) == 0.0

    def test_nested_hand_value(self):
        inner = ("split", 1, 0.5, 0.0, ("split", 2, 0.5, 2.0, 4.0))
        tree = tree_from_nested(3, ("split", 0, 0.5, inner, 10.0))
        pi = np.array([1 / 3, 1 / 3, 1 / 3, 0.0])
        assert association_limit(tree, 0, 1, tree.terminal_values, pi) == pytest.approx(-17 / 3)

    def test_identity_with_independent_limits(self):
        tree = interleaved_tree()
        r = np.random.default_rng(0)
        v0, pi = r.normal(size=8), r.dirichlet(np.ones(8))
        paired = sum(node_mse(s, v0, pi) for s in kept_regions_direct(tree, 0, 1))
        want = paired - delta_limit(tree, 0, v0, pi).delta - delta_limit(tree, 1, v0, pi).delta
        assert association_limit(tree, 0, 1, v0, pi) == pytest.approx(want, abs=1e-12)
        assert delta_limit(tree, (0, 1), v0, pi).delta == pytest.approx(paired, rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_sign_and_emptiness(self, seed):
        tree, X, _ = grown(seed % 10_000, d=3)
        pi = estimate_pi(tree, X)
        for v, w in itertools.combinations(range(3), 2):
            a = association_limit(tree, v, w, tree.terminal_values, pi)
            assert a <= 0
            if not paired_maximal_subtrees(tree, v, w).dropped:
                assert a == 0.0

    def test_identical_pair(self, three_leaf_tree):
        with pytest.raises(ValueError, match="identical pair"):
            association(three_leaf_tree, 1, 1, three_point_test())
        with pytest.raises(ValueError, match="identical pair"):
            association_limit(three_leaf_tree, 0, 0, three_leaf_tree.terminal_values, THIRD)


def brute_force_r_squared(forest, regions_of, X):
    """Average over rows of E(R0^2), enumerating every joint terminal outcome across trees."""
    B = forest.num_trees
    total = 0.0
    for x in X:
        per_tree = []
        for t in forest.trees:
            lab = int(t.label[t.apply(x[None, :])[0]])
            atoms = [(1.0, 0.0)]
            for s in regions_of(t):
                if lab in s.terminals:
                    pd = path_distribution(t, s, t.terminal_values)
                    atoms = [(p, val - t.terminal_values[lab - 1]) for _, val, p in pd.atoms]
            per_tree.append(atoms)
        for combo in itertools.product(*per_tree):
            prob = np.prod([p for p, _ in combo])
            total += prob * (sum(dev for _, dev in combo) / B) ** 2
    return total / len(X)


class TestForestLimit:
    def test_single_tree_equality(self, rng):
        tree, X, _ = grown(3)
        for v in range(tree.d):
            q = forest_limit_quantities(forest_of([tree]), v, X)
            want = delta_limit(tree, v, tree.terminal_values, estimate_pi(tree, X)).delta
            assert q.r_squared == pytest.approx(want, rel=1e-12, abs=1e-14)
            assert q.jensen_bound == pytest.approx(want, rel=1e-12, abs=1e-14)

    def test_two_identical_trees(self):
        tree = tree_from_nested(1, ("split", 0, 0.5, 2.0, 4.0))
        X = np.array([[0.2], [0.8]])
        q = forest_limit_quantities(forest_of([tree, tree]), 0, X)
        # per x: deviation mean +-1, variance 1 per tree -> 1 + 1/2; bound: s2 + 1 = 2
        assert (q.r_squared, q.jensen_bound) == (1.5, 2.0)

    def test_matches_brute_force(self):
        r = np.random.default_rng(4)
        X = r.random((60, 3))
        trees = [grow_tree(Dataset(X, X[:, 0] + r.normal(size=60)), GrowConfig(min_node_size=12, mtry=2), r)
                 for _ in range(3)]
        forest = forest_of(trees)
        sample = r.random((25, 3))
        for v in range(3):
            got = forest_limit_quantities(forest, v, sample).r_squared
            want = brute_force_r_squared(forest, lambda t: maximal_subtrees(t, v), sample)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-14)

    def test_orthogonal_across_trees(self):
        # v/w nesting lives left of x2 = 0.5 in tree 1 and right of it in tree 2
        nest = ("split", 0, 0.5, 1.0, ("split", 1, 0.5, -3.0, 6.0))
        t1 = tree_from_nested(3, ("split", 2, 0.5, nest, 0.0))
        t2 = tree_from_nested(3, ("split", 2, 0.5, 0.0, nest))
        forest = forest_of([t1, t2])
        r = np.random.default_rng(0)
        sample = r.random((400, 3))
        got = forest_association_limit(forest, 0, 1, sample)
        brute = (brute_force_r_squared(forest, lambda t: kept_regions_direct(t, 0, 1), sample)
                 - brute_force_r_squared(forest, lambda t: maximal_subtrees(t, 0), sample)
                 - brute_force_r_squared(forest, lambda t: maximal_subtrees(t, 1), sample))
        dropped = sum(node_mse(s, t.terminal_values, estimate_pi(t, sample))
                      for t in forest.trees for s in paired_maximal_subtrees(t, 0, 1).dropped)
        B = forest.num_trees
        assert got == pytest.approx(brute, rel=1e-10)
        assert got == pytest.approx(-dropped / B**2, rel=1e-10)
        assert got != pytest.approx(-dropped / B, rel=1e-3)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), B=st.integers(2, 8))
    def test_jensen_bound(self, seed, B):
        r = np.random.default_rng(seed)
        X = r.random((80, 3))
        forest = grow_forest(Dataset(X, X[:, 0] * X[:, 1] * 5 + r.normal(size=80)),
                             ForestConfig(num_trees=B, mtry=2, bootstrap=False, min_node_size=3, seed=seed))
        for v in range(3):
            q = forest_limit_quantities(forest, v, X)
            assert q.r_squared <= q.jensen_bound * (1 + 1e-12)


class TestPermutation:
    def test_unused_variable(self, rng):
        X = rng.random((50, 3))
        forest = grow_forest(Dataset(X, X[:, 0] + rng.normal(size=50) * 0.1),
                             ForestConfig(num_trees=5, mtry=1, min_node_size=3))
        tree_vars = {int(v) for t in forest.trees for v in t.var if v >= 0}
        unused = [v for v in range(3) if v not in tree_vars]
        forest2 = forest_of([tree_from_nested(3, ("split", 0, 0.5, 1.0, 2.0))])
        res = permutation_vimp(forest2, Dataset(X, rng.normal(size=50)), 2, 20, rng)
        assert res.delta == 0.0 and res.std_error == 0.0
        for v in unused:
            assert permutation_vimp(forest, Dataset(X, X[:, 0]), v, 5, rng).delta == 0.0

    def test_constant_column(self, rng):
        X = rng.random((40, 2))
        X[:, 1] = 0.3
        forest = forest_of([tree_from_nested(2, ("split", 1, 0.5, ("split", 0, 0.5, 1.0, 2.0), 3.0))])
        assert permutation_vimp(forest, Dataset(X, rng.normal(size=40)), 1, 10, rng).delta == 0.0

    def test_errors(self, three_leaf_tree, rng):
        forest = forest_of([three_leaf_tree])
        with pytest.raises(ValueError):
            permutation_vimp(forest, Dataset(np.zeros((1, 2)), np.zeros(1)), 0, 5, rng)
        with pytest.raises(ValueError):
            permutation_vimp(forest, three_point_test(), 0, 0, rng)
