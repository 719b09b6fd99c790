"""Boundary equations for the cavity trace.

The half-space trace ``f`` of the solution on the cavity boundary solves

    (I/2 + K + Dtilde) f = (S + Stilde) g,

and the free-space exterior trace on a reference shape B solves the same
equation without the image operators.  Both are solved by dense LU; the
half-space system can also be solved by the Neumann series of
``A = I/2 - K - Dtilde``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg

from .assembly import DenseOperator, assemble
from .geometry import CavityScene, SurfaceMesh

__all__ = [
    "SingularSystemError",
    "SeriesDivergenceError",
    "BoundaryField",
    "SolveReport",
    "TraceSystem",
    "pressure_datum",
    "constant_datum",
    "solve_trace",
    "exterior_trace",
    "neumann_series_solve",
]

LABELS = ("g", "f", "psi_component", "generic")


class SingularSystemError(RuntimeError):
    """The discrete boundary system could not be factorized."""


class SeriesDivergenceError(RuntimeError):
    def __init__(self, terms: int, last_norm: float):
        super().__init__(
            f"Neumann series not converged after {terms} terms (last term norm {last_norm:.3e}); "
            "spectral radius of A is probably >= 1"
        )
        self.terms = terms
        self.last_norm = last_norm


@dataclass(frozen=True)
class BoundaryField:
    """Panelwise samples of a boundary function on one mesh.

    ``pressure`` is set when the samples are ``-p . n``; integrals of such a
    field are then taken through the mesh closure vector, so they vanish
    exactly on a closed surface.
    """

    values: np.ndarray
    mesh_fingerprint: str
    label: str = "generic"
    pressure: tuple | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("boundary field values must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("boundary field has non-finite entries")
        if self.label not in LABELS:
            raise ValueError(f"unknown field label {self.label!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def check(self, mesh: SurfaceMesh) -> None:
        if self.mesh_fingerprint != mesh.fingerprint or len(self) != mesh.n_panels:
            raise ValueError(
                f"{self.label} field belongs to mesh {self.mesh_fingerprint}, not {mesh.fingerprint}"
            )

    def on(self, mesh: SurfaceMesh) -> "BoundaryField":
        """Same samples re-attached to a mesh with identical panel ordering (e.g. the placed cavity)."""
        if len(self) != mesh.n_panels:
            raise ValueError("panel count mismatch")
        return BoundaryField(self.values, mesh.fingerprint, self.label, self.pressure)

    def integral(self, mesh: SurfaceMesh) -> float:
        self.check(mesh)
        if self.pressure is not None:
            return -float(np.dot(self.pressure, mesh.closure_vector))
        return math.fsum(self.values * mesh.areas)


def pressure_datum(mesh: SurfaceMesh, p) -> BoundaryField:
    """Neumann datum g = -p . n."""
    p = np.asarray(p, dtype=float)
    return BoundaryField(-(mesh.normals @ p), mesh.fingerprint, "g", tuple(float(c) for c in p))


def constant_datum(mesh: SurfaceMesh, value: float) -> BoundaryField:
    return BoundaryField(np.full(mesh.n_panels, float(value)), mesh.fingerprint, "g")


@dataclass(frozen=True)
class SolveReport:
    method: str
    iterations: int
    residual: float


class TraceSystem:
    """Operators and factorization for one mesh.

    With ``image=True`` (a placed cavity) the system is ``I/2 + K + Dtilde``
    with right-hand side ``(S + Stilde) g``; with ``image=False`` it is the
    free-space exterior problem ``(I/2 + K) f = S g``.
    """

    def __init__(self, mesh: SurfaceMesh, image: bool = True, workers: int | None = None):
        self.mesh = mesh
        self.image = image
        self.workers = workers

    def _op(self, kind: str) -> DenseOperator:
        return assemble(kind, self.mesh, self.workers)

    @cached_property
    def S(self) -> DenseOperator:
        return self._op("S")

    @cached_property
    def K(self) -> DenseOperator:
        return self._op("K")

    @cached_property
    def Stilde(self) -> DenseOperator:
        return self._op("Stilde")

    @cached_property
    def Dtilde(self) -> DenseOperator:
        return self._op("Dtilde")

    @cached_property
    def lhs(self) -> np.ndarray:
        m = self.K.matrix + 0.5 * np.eye(self.mesh.n_panels)
        if self.image:
            m = m + self.Dtilde.matrix
        return m

    @cached_property
    def rhs_matrix(self) -> np.ndarray:
        return self.S.matrix + self.Stilde.matrix if self.image else self.S.matrix

    @cached_property
    def iteration_matrix(self) -> np.ndarray:
        """A = I/2 - K (- Dtilde) = I - lhs."""
        return np.eye(self.mesh.n_panels) - self.lhs

    @cached_property
    def _lu(self):
        lu, piv = scipy.linalg.lu_factor(self.lhs, check_finite=False)
        if np.any(np.diag(lu) == 0.0):
            raise SingularSystemError("zero pivot in boundary system (discretization failure)")
        return lu, piv

    def rhs(self, g: BoundaryField) -> np.ndarray:
        g.check(self.mesh)
        return self.rhs_matrix @ g.values

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        out = scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        if not np.all(np.isfinite(out)):
            raise SingularSystemError("non-finite solution of boundary system")
        return out

    def residual(self, f: np.ndarray, g: BoundaryField) -> float:
        return float(np.max(np.abs(self.lhs @ f - self.rhs(g)), initial=0.0))


def neumann_series_solve(
    A: np.ndarray | Callable[[np.ndarray], np.ndarray],
    rhs,
    tol: float = 1e-10,
    max_terms: int = 500,
) -> tuple[np.ndarray, int]:
    """Partial sums of sum_h A^h rhs until a term's max-norm drops to ``tol``."""
    apply = A if callable(A) else (lambda v: A @ v)
    term = np.array(rhs, dtype=float)
    total = term.copy()
    for used in range(1, max_terms + 1):
        norm = float(np.max(np.abs(term), initial=0.0))
        if norm <= tol:
            return total, used
        if not math.isfinite(norm):
            break
        term = apply(term)
        total += term
    raise SeriesDivergenceError(max_terms, norm)


def solve_trace(
    scene: CavityScene,
    g: BoundaryField,
    method: str = "direct",
    *,
    system: TraceSystem | None = None,
    tol: float = 1e-10,
    max_terms: int = 500,
) -> tuple[BoundaryField, SolveReport]:
    """Trace of u on the placed cavity boundary for Neumann datum ``g``."""
    if system is None:
        system = TraceSystem(scene.mesh)
    elif system.mesh.fingerprint != scene.mesh.fingerprint or not system.image:
        raise ValueError("system was built for a different cavity")
    b = system.rhs(g)
    if method == "direct":
        f, iterations = system.solve(b), 0
    elif method == "neumann_series":
        f, iterations = neumann_series_solve(system.iteration_matrix, b, tol, max_terms)
    else:
        raise ValueError(f"unknown method {method!r}")
    field_f = BoundaryField(f, system.mesh.fingerprint, "f")
    return field_f, SolveReport(method, iterations, system.residual(f, g))


def exterior_trace(
    B_mesh: SurfaceMesh, g: BoundaryField, *, system: TraceSystem | None = None
) -> BoundaryField:
    """(I/2 + K_B)^-1 S_B g: trace of the decaying exterior solution with Neumann datum g."""
    if system is None:
        system = TraceSystem(B_mesh, image=False)
    elif system.image or system.mesh.fingerprint != B_mesh.fingerprint:
        raise ValueError("exterior_trace needs a free-space system on B_mesh")
    label = "psi_component" if g.label == "psi_component" else "f"
    return BoundaryField(system.solve(system.rhs(g)), B_mesh.fingerprint, label)
