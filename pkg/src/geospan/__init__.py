"""Spanning surfaces of minimal total squared Gaussian curvature.

Given a closed simple contour in 3D, this package solves for the spanning
surface that minimizes the integral of the squared Gaussian curvature while
holding the contour as a geodesic of the surface. The conformal factor of
the surface metric is found from a clamped-plate boundary-value problem,
the height function over the projection plane from a prescribed-curvature
Monge-Ampere system coupled to harmonic coordinate maps, and the result is
exported as a triangle mesh with verification diagnostics.
"""

from .contour import (
    BoundaryParam,
    Contour3D,
    GraphicalityReport,
    PlanarContour,
    ProjectionFrame,
    check_graphicality,
    circle_contour,
    dirichlet_data,
    embed,
    fit_projection_frame,
    load_contour,
    project,
    resample_arclength,
)
from .errors import (
    ContourError,
    GeospanError,
    GraphicalityError,
    GridError,
    LinearSolveError,
    MeshError,
    NewtonError,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryParam",
    "Contour3D",
    "GraphicalityReport",
    "PlanarContour",
    "ProjectionFrame",
    "check_graphicality",
    "circle_contour",
    "dirichlet_data",
    "embed",
    "fit_projection_frame",
    "load_contour",
    "project",
    "resample_arclength",
    "ContourError",
    "GeospanError",
    "GraphicalityError",
    "GridError",
    "LinearSolveError",
    "MeshError",
    "NewtonError",
    "__version__",
]
