"""Small-cavity expansion of the surface field and the polarization tensor.

For a cavity z + eps * B with eps-independent datum g_hat on B, the field on
the plane x_3 = 0 behaves like

    u(x) = 2 eps^2 Gamma(x - z) int g_hat
         + 2 eps^3 grad Gamma(x - z) . int [n (I/2 + K_B)^-1 S_B g_hat - zeta g_hat]
         + O(eps^4).

For a pressure datum g_hat = -p . n the first term vanishes and the second
collapses to 2 eps^3 grad Gamma(x - z) . M p with the polarization tensor
M = int n (x) (zeta + Psi(zeta)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import CavityScene, SurfaceMesh
from .solve import BoundaryField, TraceSystem, exterior_trace, solve_trace

__all__ = [
    "PolarizationResult",
    "ExpansionSample",
    "psi_traces",
    "polarization_tensor",
    "symmetric_eigenvalues_3x3",
    "expansion_general",
    "expansion_constant_pressure",
    "inverse_operator_expansion_check",
    "loglog_slope",
]


@dataclass(frozen=True)
class PolarizationResult:
    tensor: np.ndarray
    raw_tensor: np.ndarray
    shape_fingerprint: str
    panel_count: int
    symmetry_defect: float
    eigenvalues: tuple
    min_eigenvalue: float

    @property
    def relative_symmetry_defect(self) -> float:
        return self.symmetry_defect / float(np.abs(self.raw_tensor).max())

    @property
    def is_spd(self) -> bool:
        return self.min_eigenvalue > 0.0


@dataclass(frozen=True)
class ExpansionSample:
    point: tuple
    leading_monopole: float
    dipole: float
    total: float


def psi_traces(B_mesh: SurfaceMesh, *, system: TraceSystem | None = None) -> list[BoundaryField]:
    """Traces of the exterior solutions with dPsi_i/dn = -n_i, one per axis."""
    system = system or TraceSystem(B_mesh, image=False)
    rhs = system.S.matrix @ (-B_mesh.normals)
    sol = system.solve(rhs)
    return [BoundaryField(sol[:, i], B_mesh.fingerprint, "psi_component") for i in range(3)]


def symmetric_eigenvalues_3x3(m) -> tuple[float, float, float]:
    """Ascending eigenvalues of a real symmetric 3x3 matrix (trigonometric closed form)."""
    a = np.asarray(m, dtype=float)
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3.0
    if p1 == 0.0:
        return tuple(sorted(float(x) for x in np.diag(a)))
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = min(1.0, max(-1.0, np.linalg.det(b) / 2.0))
    phi = math.acos(r) / 3.0
    hi = q + 2.0 * p * math.cos(phi)
    lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    return (float(lo), float(3.0 * q - hi - lo), float(hi))


def polarization_tensor(B_mesh: SurfaceMesh, *, system: TraceSystem | None = None) -> PolarizationResult:
    """M_ij = sum_panels n_i (zeta_j + Psi_j) area, symmetrized."""
    psi = np.stack([f.values for f in psi_traces(B_mesh, system=system)], axis=1)
    weighted_n = B_mesh.normals * B_mesh.areas[:, None]
    raw = weighted_n.T @ (B_mesh.centroids + psi)
    sym = 0.5 * (raw + raw.T)
    eig = symmetric_eigenvalues_3x3(sym)
    return PolarizationResult(
        tensor=sym,
        raw_tensor=raw,
        shape_fingerprint=B_mesh.fingerprint,
        panel_count=B_mesh.n_panels,
        symmetry_defect=float(np.abs(raw - raw.T).max()),
        eigenvalues=eig,
        min_eigenvalue=eig[0],
    )


def _plane_point(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or x[-1] != 0.0:
        raise ValueError("expansion points must lie on the plane x_3 = 0")
    return x


def expansion_general(
    x, scene: CavityScene, g_hat: BoundaryField, *, system: TraceSystem | None = None
) -> ExpansionSample:
    """Two-term expansion for an arbitrary eps-independent datum on B."""
    x = _plane_point(x)
    B = scene.base_mesh
    eps = scene.epsilon
    r = x - scene.z
    monopole = 2.0 * eps**2 * kernels.gamma(r) * g_hat.integral(B)
    trace = exterior_trace(B, g_hat, system=system).values
    moment = (B.normals * B.areas[:, None]).T @ trace - B.centroids.T @ (g_hat.values * B.areas)
    dipole = 2.0 * eps**3 * float(kernels.grad_gamma(r) @ moment)
    return ExpansionSample(tuple(x.tolist()), float(monopole), dipole, float(monopole) + dipole)


def expansion_constant_pressure(x, scene: CavityScene, p, M: PolarizationResult) -> ExpansionSample:
    """2 eps^3 grad Gamma(x - z) . M p for the pressure datum -p . n."""
    x = _plane_point(x)
    dipole = 2.0 * scene.epsilon**3 * float(kernels.grad_gamma(x - scene.z) @ (M.tensor @ np.asarray(p, dtype=float)))
    return ExpansionSample(tuple(x.tolist()), 0.0, dipole, dipole)


def inverse_operator_expansion_check(
    scene: CavityScene,
    g_hat: BoundaryField,
    *,
    f: BoundaryField | None = None,
    B_system: TraceSystem | None = None,
) -> float:
    """max_i |f_eps(z + eps zeta_i) - eps (I/2 + K_B)^-1 S_B g_hat (zeta_i)|.

    ``f`` is the half-space trace on the placed cavity (solved here when not
    given); ``g_hat`` lives on the base mesh.
    """
    B = scene.base_mesh
    g_hat.check(B)
    if f is None:
        f, _ = solve_trace(scene, g_hat.on(scene.mesh))
    f.check(scene.mesh)
    reference = exterior_trace(B, g_hat, system=B_system).values
    return float(np.max(np.abs(f.values - scene.epsilon * reference), initial=0.0))


def loglog_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h); needs at least three points."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.shape != err.shape or h.ndim != 1:
        raise ValueError("h and err must be matching 1-D sequences")
    if len(h) < 3:
        raise ValueError("need >= 3 points for a slope fit")
    if np.any(h <= 0) or np.any(err <= 0):
        raise ValueError("log-log fit needs positive values")
    lh, le = np.log(h), np.log(err)
    lh0 = lh - lh.mean()
    return float(lh0 @ (le - le.mean()) / (lh0 @ lh0))
