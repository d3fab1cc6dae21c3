import numpy as np

from treevimp.forest import Forest, ForestConfig
from treevimp.tree import tree_from_nested


def forest_of(trees):
    """Hand-built forest without bootstrap bookkeeping."""
    return Forest(list(trees), [np.empty(0, np.int64) for _ in trees],
                  ForestConfig(num_trees=len(trees), bootstrap=False))


def interleaved_tree():
    """Four-level tree with v = 0 and w = 1 splits interleaved under a root on x2.

    Maximal 0-subtrees: A (labels 1-4) and D (labels 5-7, below the 1-split C).
    Maximal 1-subtrees: B (labels 1-2, below A) and C (labels 5-8).
    """
    B = ("split", 1, 0.5, 1.0, 2.0)
    A = ("split", 0, 0.5, B, ("split", 0, 0.8, 3.0, 4.0))
    E = ("split", 1, 0.3, 5.0, 6.0)
    D = ("split", 0, 0.4, E, 7.0)
    C = ("split", 1, 0.6, D, 8.0)
    return tree_from_nested(3, ("split", 2, 0.5, A, C))
