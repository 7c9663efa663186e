"""Octree, cone planning and the interpolated evaluation engine."""

from .octree import Octree, Level, build_octree, compute_relations, morton_key, relation_counts
from .cones import (ConeConfig, ConeInterpolantStore, IFGFConsistencyError, LevelCones, interpolation_nodes,
                    locate_segment, plan_cones, segment_domain)
from .engine import IFGFOperator, brute_force, ifgf_apply, interaction_counts, values_to_coeffs

__all__ = [
    "Octree", "Level", "build_octree", "compute_relations", "morton_key", "relation_counts",
    "ConeConfig", "ConeInterpolantStore", "IFGFConsistencyError", "LevelCones", "interpolation_nodes",
    "locate_segment", "plan_cones", "segment_domain",
    "IFGFOperator", "brute_force", "ifgf_apply", "interaction_counts", "values_to_coeffs",
]
