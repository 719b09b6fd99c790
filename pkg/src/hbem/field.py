"""Evaluation of the half-space solution away from the cavity.

u(x) = sum_j [N(x, y_j) g_j - dN/dn_y(x, y_j) f_j] area_j, with the Neumann
function N(x, y) = Gamma(x - y) + Gamma(x~ - y).  On the plane x_3 = 0 the
two terms coincide and u = 2 (S g - D f).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .assembly import worker_count
from .geometry import CavityScene
from .solve import BoundaryField, TraceSystem

__all__ = [
    "NearFieldError",
    "FieldSample",
    "evaluate",
    "evaluate_on_plane",
    "evaluate_points",
    "boundary_limit_check",
]

POINT_BLOCK = 64


class NearFieldError(ValueError):
    """Evaluation point lies within one panel diameter of the cavity."""


@dataclass(frozen=True)
class FieldSample:
    point: tuple
    value: float
    on_plane: bool

    def __post_init__(self):
        if self.on_plane and self.point[-1] != 0.0:
            raise ValueError("on-plane sample must have zero last coordinate")


def _check_inputs(scene: CavityScene, f: BoundaryField, g: BoundaryField) -> None:
    f.check(scene.mesh)
    g.check(scene.mesh)


def _check_far(x: np.ndarray, scene: CavityScene) -> None:
    mesh = scene.mesh
    d = np.linalg.norm(x[:, None, :] - mesh.centroids[None, :, :], axis=2)
    close = d <= mesh.diameters[None, :]
    if np.any(close):
        bad = x[np.flatnonzero(close.any(axis=1))[0]]
        raise NearFieldError(f"point {bad.tolist()} is within a panel diameter of the cavity")


def _values(x: np.ndarray, scene: CavityScene, f: np.ndarray, g: np.ndarray, plane: bool) -> np.ndarray:
    mesh = scene.mesh
    c, n, a = mesh.centroids[None], mesh.normals[None], mesh.areas
    xb = x[:, None, :]
    if plane:
        single = kernels.gamma(xb - c)
        double = kernels.kernel_K(xb, c, n)
        return 2.0 * ((single * g - double * f) @ a)
    xr = kernels.reflect(xb)
    single = kernels.gamma(xb - c) + kernels.gamma(xr - c)
    double = kernels.kernel_K(xb, c, n) + kernels.kernel_K(xr, c, n)
    return (single * g - double * f) @ a


def evaluate_points(points, scene: CavityScene, f: BoundaryField, g: BoundaryField, *, plane: bool = False) -> np.ndarray:
    """Vectorized field values at many points (each row computed independently)."""
    _check_inputs(scene, f, g)
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[1] != 3:
        raise ValueError("points must be 3-D")
    if np.any(x[:, -1] > 0):
        raise ValueError("points must lie in the closed lower half-space")
    if plane and np.any(x[:, -1] != 0.0):
        raise ValueError("evaluate_on_plane needs points with x_3 == 0")
    _check_far(x, scene)
    out = np.empty(len(x))
    blocks = [slice(s, min(s + POINT_BLOCK, len(x))) for s in range(0, len(x), POINT_BLOCK)]

    def fill(sl):
        out[sl] = _values(x[sl], scene, f.values, g.values, plane)

    workers = worker_count()
    if workers == 1 or len(blocks) == 1:
        for sl in blocks:
            fill(sl)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    return out


def evaluate(x, scene: CavityScene, f: BoundaryField, g: BoundaryField) -> FieldSample:
    """u at a point of the closed half-space outside the cavity."""
    x = np.asarray(x, dtype=float)
    value = evaluate_points(x[None], scene, f, g)[0]
    return FieldSample(tuple(x.tolist()), float(value), bool(x[-1] == 0.0))


def evaluate_on_plane(x, scene: CavityScene, f: BoundaryField, g: BoundaryField) -> FieldSample:
    """u on the free surface x_3 = 0 via 2 (S g - D f)."""
    x = np.asarray(x, dtype=float)
    value = evaluate_points(x[None], scene, f, g, plane=True)[0]
    return FieldSample(tuple(x.tolist()), float(value), True)


def boundary_limit_check(
    scene: CavityScene, f: BoundaryField, g: BoundaryField, *, system: TraceSystem | None = None
) -> float:
    """max_i |f_i - [S g + Stilde g - (-I/2 + K + Dtilde) f]_i|.

    The bracket is the boundary limit of the representation formula from the
    exterior, so the value is small exactly when ``f`` is a consistent trace.
    """
    _check_inputs(scene, f, g)
    system = system or TraceSystem(scene.mesh)
    mesh = scene.mesh
    s = system.S.matrix @ g.values + system.Stilde.matrix @ g.values
    d_ext = system.K.matrix @ f.values - 0.5 * f.values + system.Dtilde.matrix @ f.values
    return float(np.max(np.abs(f.values - (s - d_ext)), initial=0.0)) if mesh.n_panels else 0.0
