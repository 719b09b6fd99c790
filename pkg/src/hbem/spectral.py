"""Spectrum of the discrete adjoint operator K* + Dtilde*.

Eigenvalues come from an in-repo dense nonsymmetric eigensolver: Householder
reduction to upper Hessenberg form followed by the Francis double-shift QR
iteration (eigenvalues only).  Both stages are compiled with numba.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .assembly import adjoint_discretization, assemble
from .geometry import CavityScene, SurfaceMesh

__all__ = [
    "EigenConvergenceError",
    "SpectrumReport",
    "hessenberg",
    "eigenvalues",
    "operator_matrix",
    "spectrum",
    "spectral_radius_A",
    "half_eigenfunction_check",
    "adjoint_conjugacy_check",
    "hausdorff_distance",
]

IMAG_TOL = 0.01
HALF_WINDOW = 0.02
MAX_ITS = 60


class EigenConvergenceError(RuntimeError):
    def __init__(self, partial: np.ndarray):
        super().__init__(f"QR iteration did not converge; {len(partial)} eigenvalues found")
        self.partial = partial


@numba.njit(cache=True)
def _hessenberg_inplace(a):
    n = a.shape[0]
    v = np.empty(n)
    w = np.empty(n)
    for k in range(n - 2):
        m = n - k - 1
        scale = 0.0
        for i in range(m):
            scale = max(scale, abs(a[k + 1 + i, k]))
        if scale == 0.0:
            continue
        # the reflector is invariant under scaling of v; scaling avoids under/overflow
        sigma = 0.0
        for i in range(m):
            v[i] = a[k + 1 + i, k] / scale
            sigma += v[i] * v[i]
        xnorm = math.sqrt(sigma)
        if xnorm == 0.0:
            continue
        alpha = -xnorm if v[0] >= 0.0 else xnorm
        v[0] -= alpha
        vnorm2 = 0.0
        for i in range(m):
            vnorm2 += v[i] * v[i]
        if vnorm2 == 0.0:
            continue
        beta = 2.0 / vnorm2
        # left: rows k+1.., columns k..
        for j in range(k, n):
            w[j] = 0.0
        for i in range(m):
            vi = v[i]
            for j in range(k, n):
                w[j] += vi * a[k + 1 + i, j]
        for i in range(m):
            c = beta * v[i]
            for j in range(k, n):
                a[k + 1 + i, j] -= c * w[j]
        # right: all rows, columns k+1..
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += a[i, k + 1 + j] * v[j]
            s *= beta
            for j in range(m):
                a[i, k + 1 + j] -= s * v[j]
        for i in range(k + 2, n):
            a[i, k] = 0.0
    return a


@numba.njit(cache=True)
def _sign(a, b):
    return abs(a) if b >= 0.0 else -abs(a)


@numba.njit(cache=True)
def _hqr(a, max_its):
    # Francis double-shift QR on an upper Hessenberg matrix (overwritten).
    # Returns (wr, wi, nn): nn >= 0 signals non-convergence, with
    # eigenvalues nn+1..n-1 already found.
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i, j])
    nn = n - 1
    t = 0.0
    its = 0
    p = q = r = s = w = x = y = z = 0.0
    while nn >= 0:
        l = nn
        while l >= 1:
            s = abs(a[l - 1, l - 1]) + abs(a[l, l])
            if s == 0.0:
                s = anorm
            if abs(a[l, l - 1]) + s == s:
                a[l, l - 1] = 0.0
                break
            l -= 1
        x = a[nn, nn]
        if l == nn:
            wr[nn] = x + t
            wi[nn] = 0.0
            nn -= 1
            its = 0
            continue
        y = a[nn - 1, nn - 1]
        w = a[nn, nn - 1] * a[nn - 1, nn]
        if l == nn - 1:
            p = 0.5 * (y - x)
            q = p * p + w
            z = math.sqrt(abs(q))
            x += t
            if q >= 0.0:
                z = p + _sign(z, p)
                wr[nn - 1] = x + z
                wr[nn] = x + z
                if z != 0.0:
                    wr[nn] = x - w / z
                wi[nn - 1] = 0.0
                wi[nn] = 0.0
            else:
                wr[nn - 1] = x + p
                wr[nn] = x + p
                wi[nn - 1] = -z
                wi[nn] = z
            nn -= 2
            its = 0
            continue
        if its == max_its:
            return wr, wi, nn
        if its > 0 and its % 10 == 0:
            # exceptional shift
            t += x
            for i in range(nn + 1):
                a[i, i] -= x
            s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
            x = 0.75 * s
            y = x
            w = -0.4375 * s * s
        its += 1
        m = nn - 2
        while m >= l:
            z = a[m, m]
            r = x - z
            s = y - z
            p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
            q = a[m + 1, m + 1] - z - r - s
            r = a[m + 2, m + 1]
            s = abs(p) + abs(q) + abs(r)
            p /= s
            q /= s
            r /= s
            if m == l:
                break
            u = abs(a[m, m - 1]) * (abs(q) + abs(r))
            v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
            if u + v == v:
                break
            m -= 1
        for i in range(m + 2, nn + 1):
            a[i, i - 2] = 0.0
            if i != m + 2:
                a[i, i - 3] = 0.0
        k = m
        while k <= nn - 1:
            if k != m:
                p = a[k, k - 1]
                q = a[k + 1, k - 1]
                r = 0.0
                if k + 1 != nn:
                    r = a[k + 2, k - 1]
                x = abs(p) + abs(q) + abs(r)
                if x != 0.0:
                    p /= x
                    q /= x
                    r /= x
            s = _sign(math.sqrt(p * p + q * q + r * r), p)
            if s != 0.0:
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k + 1 != nn:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k + 1 != nn:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
            k += 1
    return wr, wi, nn


def hessenberg(matrix) -> np.ndarray:
    """Upper Hessenberg matrix orthogonally similar to ``matrix``."""
    a = np.array(matrix, dtype=np.float64, order="C", copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    return _hessenberg_inplace(a)


def eigenvalues(matrix, max_its: int = MAX_ITS) -> np.ndarray:
    """All eigenvalues of a real square matrix, sorted by real part descending."""
    h = hessenberg(matrix)
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix has non-finite entries")
    wr, wi, nn = _hqr(h, max_its)
    lam = wr + 1j * wi
    if nn >= 0:
        raise EigenConvergenceError(_sorted(lam[nn + 1 :]))
    return _sorted(lam)


def _sorted(lam: np.ndarray) -> np.ndarray:
    order = np.lexsort((-lam.imag, -lam.real))
    return lam[order]


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: tuple
    max_imag: float
    count_near_half: int
    min_real: float
    max_real: float

    @classmethod
    def from_values(cls, lam: np.ndarray) -> "SpectrumReport":
        lam = _sorted(np.asarray(lam, dtype=complex))
        return cls(
            eigenvalues=tuple((float(v.real), float(v.imag)) for v in lam),
            max_imag=float(np.abs(lam.imag).max(initial=0.0)),
            count_near_half=int(np.sum(np.abs(lam - 0.5) <= HALF_WINDOW)),
            min_real=float(lam.real.min()),
            max_real=float(lam.real.max()),
        )

    @property
    def values(self) -> np.ndarray:
        return np.array([complex(re, im) for re, im in self.eigenvalues])

    @property
    def imag_flagged(self) -> bool:
        return self.max_imag > IMAG_TOL

    def inclusion_ok(self, lower: float = -0.5 + 0.005, upper: float = 0.5 + 0.02) -> bool:
        """Real parts inside (lower, upper), imaginary noise below tolerance, simple eigenvalue 1/2."""
        return (
            self.min_real > lower
            and self.max_real < upper
            and not self.imag_flagged
            and self.count_near_half == 1
        )


def operator_matrix(mesh: SurfaceMesh, image: bool = True, *, adjoint: bool = True) -> np.ndarray:
    """K* + Dtilde* (or K + Dtilde with ``adjoint=False``); image term dropped if ``image`` is false."""
    K = assemble("K", mesh)
    out = adjoint_discretization(K, mesh).matrix if adjoint else K.matrix
    if image:
        Dt = assemble("Dtilde", mesh)
        out = out + (adjoint_discretization(Dt, mesh).matrix if adjoint else Dt.matrix)
    return out


def spectrum(scene: CavityScene, *, image: bool = True) -> SpectrumReport:
    """Eigenvalues of K*_h + Dtilde*_h on the placed cavity."""
    return SpectrumReport.from_values(eigenvalues(operator_matrix(scene.mesh, image)))


def spectral_radius_A(report: SpectrumReport) -> float:
    """Spectral radius of A = I/2 - K - Dtilde (same spectrum as I/2 - K* - Dtilde*)."""
    return float(np.abs(0.5 - report.values).max())


def _half_eigenvector(matrix: np.ndarray, lam: float, iterations: int = 4) -> np.ndarray:
    n = matrix.shape[0]
    # shift slightly off the computed eigenvalue so the factorization stays regular
    shift = lam + 1e-10 * max(1.0, abs(lam))
    lu = scipy.linalg.lu_factor(matrix - shift * np.eye(n))
    v = np.ones(n) / math.sqrt(n)
    for _ in range(iterations):
        v = scipy.linalg.lu_solve(lu, v)
        v /= np.linalg.norm(v)
    return v


def half_eigenfunction_check(scene: CavityScene, report: SpectrumReport | None = None, scale: float = 1.0) -> float:
    """||(K* + Dtilde*) v - v/2|| / ||v|| for the eigenvector v nearest 1/2."""
    matrix = operator_matrix(scene.mesh)
    lam = (report.values if report is not None else eigenvalues(matrix))
    nearest = lam[np.argmin(np.abs(lam - 0.5))]
    v = scale * _half_eigenvector(matrix, float(nearest.real))
    return float(np.linalg.norm(matrix @ v - 0.5 * v) / np.linalg.norm(v))


def hausdorff_distance(a, b) -> float:
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def adjoint_conjugacy_check(scene: CavityScene, weights=None) -> float:
    """Hausdorff distance between the spectra of K + Dtilde and K* + Dtilde*.

    ``weights`` replaces the panel areas in the weighted transpose of the
    adjoint side only (a deliberate mismatch for negative controls).
    """
    mesh = scene.mesh
    primal = operator_matrix(mesh, adjoint=False)
    if weights is None:
        dual = operator_matrix(mesh)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (mesh.n_panels,) or np.any(w <= 0):
            raise ValueError("weights must be positive, one per panel")
        K = assemble("K", mesh).matrix
        # jittered weights enter K-part only, so the similarity is broken
        dual = (K.T * w[None, :] / w[:, None]) + adjoint_discretization(assemble("Dtilde", mesh), mesh).matrix
    return hausdorff_distance(eigenvalues(primal), eigenvalues(dual))
