"""Boundary element solver for a pressurized cavity under a traction-free plane.

The potential u is harmonic in the lower half-space outside a small cavity
z + eps * B, has prescribed normal derivative on the cavity boundary and
vanishing normal derivative on the plane x_3 = 0.  The package discretizes the
image-augmented boundary equation by centroid collocation, evaluates u, and
checks it against the small-cavity expansion built on the polarization tensor.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .assembly import DenseOperator, adjoint_discretization, assemble
from .asymptotics import (
    expansion_constant_pressure,
    expansion_general,
    inverse_operator_expansion_check,
    loglog_slope,
    polarization_tensor,
)
from .field import boundary_limit_check, evaluate, evaluate_on_plane, evaluate_points
from .geometry import CavityScene, SurfaceMesh, ellipsoid, icosphere, load_mesh, place, write_off
from .solve import (
    BoundaryField,
    TraceSystem,
    constant_datum,
    exterior_trace,
    neumann_series_solve,
    pressure_datum,
    solve_trace,
)
from .spectral import SpectrumReport, eigenvalues, spectrum

__all__ = [
    "__version__",
    "BoundaryField",
    "CavityScene",
    "DenseOperator",
    "SpectrumReport",
    "SurfaceMesh",
    "TraceSystem",
    "adjoint_discretization",
    "assemble",
    "boundary_limit_check",
    "constant_datum",
    "eigenvalues",
    "ellipsoid",
    "evaluate",
    "evaluate_on_plane",
    "evaluate_points",
    "expansion_constant_pressure",
    "expansion_general",
    "exterior_trace",
    "icosphere",
    "inverse_operator_expansion_check",
    "load_mesh",
    "loglog_slope",
    "neumann_series_solve",
    "place",
    "polarization_tensor",
    "pressure_datum",
    "solve_trace",
    "spectrum",
    "write_off",
]
