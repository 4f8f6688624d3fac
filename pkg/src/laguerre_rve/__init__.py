"""Periodic Laguerre tessellations with prescribed cell volumes.

The package maximizes the concave dual objective of periodic semi-discrete
optimal transport with a damped Newton method, yielding 3D periodic power
diagrams whose cells hit target volumes to a prescribed percentage error,
and wraps that solver in a Lloyd-regularized pipeline for generating
polycrystalline representative volume elements.
"""

__version__ = "0.1.0"

from .errors import (
    DegeneratePairError,
    EmptyCellError,
    InfeasibleStartError,
    LaguerreRveError,
    LineSearchError,
    MaxIterationsError,
    SecurityCheckError,
    SingularHessianError,
    SolverError,
)
from .geometry import (
    ConvexPolyhedron,
    Facet,
    Lattice,
    Plane,
    clip_by_halfspace,
    periodic_sq_distance,
    polyhedron_measures,
    second_moment_about,
    wrap_point,
)
from .rve import (
    RveResult,
    VolumeSpec,
    generate_rve,
    lloyd_step,
    sample_seeds,
    sample_targets,
)
from .sdot import (
    SolverConfig,
    SolverReport,
    TargetMasses,
    damped_newton,
    kantorovich_gradient,
    kantorovich_hessian,
    kantorovich_value,
    mass_error,
    reduced_solve,
)
from .tessellation import (
    LaguerreDiagram,
    SeedSet,
    Tessellator,
    compute_cell,
    compute_diagram,
    monte_carlo_volumes,
    radical_plane,
)

__all__ = [
    "ConvexPolyhedron",
    "DegeneratePairError",
    "EmptyCellError",
    "Facet",
    "InfeasibleStartError",
    "LaguerreDiagram",
    "LaguerreRveError",
    "Lattice",
    "LineSearchError",
    "MaxIterationsError",
    "Plane",
    "RveResult",
    "SecurityCheckError",
    "SeedSet",
    "SingularHessianError",
    "SolverConfig",
    "SolverError",
    "SolverReport",
    "TargetMasses",
    "Tessellator",
    "VolumeSpec",
    "clip_by_halfspace",
    "compute_cell",
    "compute_diagram",
    "damped_newton",
    "generate_rve",
    "kantorovich_gradient",
    "kantorovich_hessian",
    "kantorovich_value",
    "lloyd_step",
    "mass_error",
    "monte_carlo_volumes",
    "periodic_sq_distance",
    "polyhedron_measures",
    "radical_plane",
    "reduced_solve",
    "sample_seeds",
    "sample_targets",
    "second_moment_about",
    "wrap_point",
]
