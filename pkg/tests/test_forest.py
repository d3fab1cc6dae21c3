import numpy as np
import pytest

from _util import forest_of
from treevimp.forest import Forest, ForestConfig, forest_predict, grow_forest, oob_mse, tree_rng
from treevimp.tree import Dataset, GrowConfig, grow_tree, predict, rectangle_indicator_tree, tree_from_nested


@pytest.fixture
def data(rng):
    X = rng.random((120, 4))
    return Dataset(X, 5 * X[:, 0] * X[:, 1] + X[:, 2] + 0.3 * rng.normal(size=120))


def test_single_tree_forest_is_cart(data):
    forest = grow_forest(data, ForestConfig(num_trees=1, bootstrap=False, min_node_size=4))
    assert forest.trees[0].structurally_equal(grow_tree(data, GrowConfig(min_node_size=4)))
    np.testing.assert_array_equal(forest_predict(forest, data.X), predict(forest.trees[0], data.X))


def test_constant_response(rng):
    X = rng.random((30, 2))
    forest = grow_forest(Dataset(X, np.full(30, -2.5)), ForestConfig(num_trees=7, mtry=1, bootstrap=True))
    assert all(t.num_terminals == 1 for t in forest.trees)
    assert np.all(forest_predict(forest, rng.random((10, 2))) == -2.5)


def test_byte_identical_and_thread_independent(data):
    cfg = ForestConfig(num_trees=10, mtry=2, bootstrap=True, min_node_size=3, seed=11)
    a = grow_forest(data, cfg).to_json()
    assert grow_forest(data, cfg).to_json() == a
    assert grow_forest(data, cfg, threads=4).to_json() == a
    assert grow_forest(data, ForestConfig(num_trees=10, mtry=2, min_node_size=3, seed=12)).to_json() != a


def test_tree_streams_are_independent_of_b_order(data):
    cfg = ForestConfig(num_trees=6, mtry=2, seed=3)
    small = grow_forest(data, ForestConfig(num_trees=3, mtry=2, seed=3))
    big = grow_forest(data, cfg)
    for a, b in zip(small.trees, big.trees):
        assert a.structurally_equal(b)
    assert tree_rng(3, 1).random() == tree_rng(3, 1).random() != tree_rng(3, 2).random()


def test_json_round_trip(data):
    forest = grow_forest(data, ForestConfig(num_trees=4, mtry=3, seed=1))
    forest.extra["response"] = "y"
    back = Forest.from_json(forest.to_json())
    assert back.to_json() == forest.to_json()
    assert back.extra == {"response": "y"}
    np.testing.assert_array_equal(back.predict(data.X), forest.predict(data.X))


class TestPredict:
    def test_two_trees_average(self):
        forest = forest_of([tree_from_nested(1, 2.0), tree_from_nested(1, 4.0)])
        assert forest_predict(forest, [0.3]) == 3.0

    def test_copies_of_one_tree(self, data):
        tree = grow_tree(data, GrowConfig(min_node_size=2))
        forest = forest_of([tree] * 5)
        np.testing.assert_allclose(forest_predict(forest, data.X), predict(tree, data.X), rtol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forest_predict(forest_of([tree_from_nested(2, 1.0)]), [0.1])

    def test_empty_forest(self):
        with pytest.raises(ValueError):
            forest_of([])

    def test_staircase_from_rectangles(self):
        # a 4 x 4 step function on [0,1]^2 written as a signed sum of lower-left rectangle indicators
        cuts = np.array([0.25, 0.5, 0.75, 1.0])
        levels = np.arange(16, dtype=float).reshape(4, 4) ** 1.5
        # the rectangle at (c_i, c_j) covers cells <= (i, j): difference the levels from the top corner
        coef = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                coef[i, j] = (levels[i, j] - (levels[i + 1, j] if i < 3 else 0) - (levels[i, j + 1] if j < 3 else 0)
                              + (levels[i + 1, j + 1] if i < 3 and j < 3 else 0))
        B = 16
        trees = []
        for i in range(4):
            for j in range(4):
                t = rectangle_indicator_tree([cuts[i], cuts[j]])
                t.value[t.terminal_ids[0]] = B * coef[i, j]
                trees.append(t)
        forest = forest_of(trees)
        g = (np.arange(100) + 0.5) / 100
        X = np.array([(a, b) for a in g for b in g])
        want = levels[np.minimum((X[:, 0] * 4).astype(int), 3), np.minimum((X[:, 1] * 4).astype(int), 3)]
        assert np.sqrt(np.mean((forest.predict(X) - want) ** 2)) < 1e-12


class TestOob:
    def test_requires_bootstrap(self, data):
        forest = grow_forest(data, ForestConfig(num_trees=2, bootstrap=False))
        with pytest.raises(ValueError, match="no out-of-bag data"):
            oob_mse(forest, data)

    def test_interpolating_forest(self, rng):
        # a row that is out of bag for a tree predicting it exactly adds nothing
        X = rng.random((30, 2))
        y = rng.normal(size=30)
        exact = tree_from_nested(2, 0.0)
        forest = Forest([exact], [np.arange(1, 30)], ForestConfig(num_trees=1, bootstrap=True))
        data = Dataset(X, np.r_[0.0, y[1:]])
        assert oob_mse(forest, data) == (0.0, 29)

    def test_all_in_bag(self):
        forest = Forest([tree_from_nested(1, 1.0)], [np.arange(3)], ForestConfig(num_trees=1, bootstrap=True))
        with pytest.raises(ValueError, match="no out-of-bag data"):
            oob_mse(forest, Dataset(np.zeros((3, 1)), np.zeros(3)))

    def test_single_tree_equals_tree_mse_on_oob(self, data):
        forest = grow_forest(data, ForestConfig(num_trees=1, bootstrap=True, seed=2))
        oob = np.setdiff1d(np.arange(data.n), forest.inbag[0])
        want = np.mean((data.y[oob] - predict(forest.trees[0], data.X[oob])) ** 2)
        got, skipped = oob_mse(forest, data)
        assert got == pytest.approx(want, rel=1e-14) and skipped == data.n - oob.size

    def test_no_skipped_rows_at_1000_trees(self, rng):
        X = rng.random((100, 3))
        forest = grow_forest(Dataset(X, X[:, 0] + rng.normal(size=100)),
                             ForestConfig(num_trees=1000, mtry=2, bootstrap=True, seed=0))
        assert oob_mse(forest, Dataset(X, X[:, 0]))[1] == 0
