"""Closed-form kernels for the Laplacian in the lower half-space.

All functions accept points as arrays whose last axis holds the ``d``
coordinates, so they broadcast over batches of source/target pairs.  The
dimension is read from the trailing axis; meshes in this package are 3-D but
the formulas below hold for any ``d >= 3``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "SingularPointError",
    "KernelConstants",
    "constants",
    "reflect",
    "gamma",
    "grad_gamma",
    "neumann_function",
    "kernel_K",
    "kernel_Kstar",
    "kernel_Dtilde",
    "kernel_Dtilde_star",
]


class SingularPointError(ValueError):
    """A kernel was evaluated at (or through) its singularity."""


@dataclass(frozen=True)
class KernelConstants:
    dimension: int
    omega_d: float
    kappa_d: float


@lru_cache(maxsize=None)
def constants(d: int = 3) -> KernelConstants:
    """Surface area of the unit sphere in R^d and the matching Gamma prefactor."""
    if d < 3:
        raise ValueError(f"dimension must be >= 3, got {d}")
    omega = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    if d == 3:
        omega = 4.0 * math.pi
    return KernelConstants(d, omega, 1.0 / (omega * (2 - d)))


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 3:
        raise ValueError("points need a trailing axis of length d >= 3")
    return x


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # fixed component order keeps results independent of array layout
    out = a[..., 0] * b[..., 0]
    for k in range(1, a.shape[-1]):
        out = out + a[..., k] * b[..., k]
    return out


def _norm(r: np.ndarray, what: str) -> np.ndarray:
    dist = np.sqrt(_dot(r, r))
    if np.any(dist == 0.0):
        raise SingularPointError(f"{what}: coincident points")
    return dist


def reflect(x) -> np.ndarray:
    """Mirror image across the plane x_d = 0."""
    y = np.array(x, dtype=float, copy=True)
    y[..., -1] = -y[..., -1]
    return y


def gamma(x) -> np.ndarray | float:
    """Fundamental solution kappa_d |x|^(2-d)."""
    x = _as_points(x)
    c = constants(x.shape[-1])
    r = _norm(x, "gamma")
    out = c.kappa_d * r ** (2 - c.dimension)
    return out if out.ndim else float(out)


def grad_gamma(x) -> np.ndarray:
    """Gradient of ``gamma``: x / (omega_d |x|^d)."""
    x = _as_points(x)
    c = constants(x.shape[-1])
    r = _norm(x, "grad_gamma")
    return x / (c.omega_d * r[..., None] ** c.dimension)


def neumann_function(x, y) -> np.ndarray | float:
    """Half-space Neumann function Gamma(x - y) + Gamma(x~ - y)."""
    x = _as_points(x)
    y = _as_points(y)
    return gamma(x - y) + gamma(reflect(x) - y)


def _normal_flux(r: np.ndarray, n: np.ndarray, what: str):
    # (r . n) / (omega_d |r|^d)
    c = constants(r.shape[-1])
    r, n = np.broadcast_arrays(r, n)
    dist = _norm(r, what)
    out = _dot(r, n) / (c.omega_d * dist ** c.dimension)
    return out if out.ndim else float(out)


def kernel_K(x, y, n_y):
    """Double-layer kernel (y - x) . n_y / (omega_d |x - y|^d) = dGamma(x - y)/dn_y."""
    x, y = _as_points(x), _as_points(y)
    return _normal_flux(y - x, np.asarray(n_y, dtype=float), "kernel_K")


def kernel_Kstar(x, y, n_x):
    """Adjoint double-layer kernel, normal taken at the target point."""
    x, y = _as_points(x), _as_points(y)
    return _normal_flux(x - y, np.asarray(n_x, dtype=float), "kernel_Kstar")


def kernel_Dtilde(x, y, n_y):
    """Image double-layer kernel: ``kernel_K`` with the target reflected."""
    x, y = _as_points(x), _as_points(y)
    return _normal_flux(y - reflect(x), np.asarray(n_y, dtype=float), "kernel_Dtilde")


def kernel_Dtilde_star(x, y, n_x):
    """Adjoint image kernel (x - y~) . n_x / (omega_d |y~ - x|^d)."""
    x, y = _as_points(x), _as_points(y)
    return _normal_flux(x - reflect(y), np.asarray(n_x, dtype=float), "kernel_Dtilde_star")
