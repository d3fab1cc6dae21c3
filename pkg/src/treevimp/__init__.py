"""Variable importance by left-right noising for regression trees and forests."""

from .forest import Forest, ForestConfig, forest_predict, grow_forest, oob_mse
from .noising import NoisingMode, build_noised_predictor, noised_predict_sample
from .subtree import estimate_pi, maximal_subtrees, node_mse, paired_maximal_subtrees, path_distribution
from .tree import Dataset, GrowConfig, Tree, grow_tree, node_membership, predict, rectangle_indicator_tree
from .vimp import (SignalSpec, association, association_limit, delta_exact, delta_formula, delta_limit, delta_mc,
                   forest_limit_quantities, mse, permutation_vimp)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "GrowConfig", "Tree", "grow_tree", "node_membership", "predict", "rectangle_indicator_tree",
    "maximal_subtrees", "paired_maximal_subtrees", "path_distribution", "node_mse", "estimate_pi",
    "NoisingMode", "build_noised_predictor", "noised_predict_sample",
    "Forest", "ForestConfig", "grow_forest", "forest_predict", "oob_mse",
    "SignalSpec", "mse", "delta_exact", "delta_mc", "delta_formula", "delta_limit", "association",
    "association_limit", "forest_limit_quantities", "permutation_vimp",
]
