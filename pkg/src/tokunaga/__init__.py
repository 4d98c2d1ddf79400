"""Random self-similar trees with Tokunaga side-branching.

Sampling, Horton pruning, branch statistics, exact small-tree
probabilities and the time-evolution checks live in the submodules; the
most used names are re-exported here.
"""

from .params import CriticalTokunaga, GeometricTokunaga, TokunagaParams, side_order_distribution
from .tree import (
    OrderedTree,
    Tree,
    branch_statistics,
    canonical_code,
    compute_orders,
    prune,
    prune_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "CriticalTokunaga",
    "GeometricTokunaga",
    "OrderedTree",
    "TokunagaParams",
    "Tree",
    "branch_statistics",
    "canonical_code",
    "compute_orders",
    "prune",
    "prune_trajectory",
    "side_order_distribution",
]
