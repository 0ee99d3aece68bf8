from .laplacian import ScaledLaplacian, chebyshev_apply, combinatorial_laplacian, power_iteration_lambda_max
from .qem import SamplingHierarchy, SamplingLevel, build_sampling_hierarchy, qem_simplify
from .topology import TopologyError, TopologyGraph, build_topology

__all__ = [
    "TopologyGraph",
    "TopologyError",
    "build_topology",
    "ScaledLaplacian",
    "combinatorial_laplacian",
    "chebyshev_apply",
    "power_iteration_lambda_max",
    "SamplingHierarchy",
    "SamplingLevel",
    "build_sampling_hierarchy",
    "qem_simplify",
]
