"""IFGF-accelerated combined-field solver for sound-soft acoustic scattering.

Modules
-------
chebyshev      Chebyshev interpolation and Fejer quadrature.
geometry       Chebyshev-parametrized multi-patch surfaces.
kernels        Helmholtz kernels and their factored forms.
ifgf           Octree, cone segments and the accelerated operator.
rp_quadrature  Rectangular-Polar singular quadrature.
solver         Combined-field operator, incident fields and GMRES.
postprocess    Far and near fields, Mie reference, error metrics.
cli            ``ifgf-rp`` command-line interface.
"""

from ._backend import backend_name
from .geometry import SurfaceMesh, build_sphere, load_patch_file, refine_split, sphere_for_wavelengths
from .solver import CombinedOperator, ConvergenceError, PlaneWave, PointSources, SolveConfig, solve

__version__ = "0.1.0"

__all__ = [
    "backend_name", "SurfaceMesh", "build_sphere", "load_patch_file", "refine_split", "sphere_for_wavelengths",
    "CombinedOperator", "ConvergenceError", "PlaneWave", "PointSources", "SolveConfig", "solve",
]
