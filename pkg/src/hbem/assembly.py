"""Dense collocation matrices for the layer operators on a cavity mesh.

Entry (i, j) is the kernel evaluated at centroid i against centroid j, times
the area of panel j.  Rows are assembled in fixed-size blocks that may be
spread over worker threads; because the block partition never depends on the
worker count, the resulting matrices are bitwise identical for any
``HBEM_THREADS`` setting.
"""
from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import DepthViolationError, SurfaceMesh

__all__ = [
    "KINDS",
    "IMAGE_KINDS",
    "DenseOperator",
    "assemble",
    "self_term_S",
    "adjoint_discretization",
    "worker_count",
    "dump_operator",
    "load_operator",
]

KINDS = ("S", "K", "Kstar", "Stilde", "D", "Dtilde", "DtildeStar")
IMAGE_KINDS = frozenset({"Stilde", "Dtilde", "DtildeStar"})
ROW_BLOCK = 128

_ADJOINT = {"K": "Kstar", "Kstar": "K", "Dtilde": "DtildeStar", "DtildeStar": "Dtilde"}


@dataclass(frozen=True)
class DenseOperator:
    """A discretized layer operator tied to the mesh it was assembled on.

    Kind ``D`` holds the exterior boundary trace of the double layer
    potential, ``-I/2 + K``; the remaining kinds are the plain collocation
    matrices of their kernels.
    """

    kind: str
    matrix: np.ndarray
    mesh_fingerprint: str
    uses_image: bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator matrix must be square")
        if self.uses_image != (self.kind in IMAGE_KINDS):
            raise ValueError(f"uses_image flag inconsistent with kind {self.kind}")
        if not np.all(np.isfinite(m)):
            raise ValueError(f"non-finite entries in {self.kind} matrix")
        m.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, values):
        return self.matrix @ np.asarray(values, dtype=float)


def worker_count() -> int:
    env = os.environ.get("HBEM_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("HBEM_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def self_term_S(panel_or_area) -> float:
    """Single-layer self term from the equal-area disk: kappa_3 * 2 pi * sqrt(area / pi)."""
    area = getattr(panel_or_area, "area", panel_or_area)
    return kernels.constants(3).kappa_d * 2.0 * math.pi * math.sqrt(float(area) / math.pi)


def _offdiag_sources(x: np.ndarray, y: np.ndarray, rows: np.ndarray) -> np.ndarray:
    # Sources for a block with coincident diagonal pairs moved off the target
    # (the diagonal is overwritten afterwards).
    src = np.array(np.broadcast_to(y[None, :, :], (len(rows),) + y.shape))
    local = np.arange(len(rows))
    src[local, rows] += 1.0
    return src


def _block(kind: str, mesh: SurfaceMesh, rows: np.ndarray) -> np.ndarray:
    c, nrm, a = mesh.centroids, mesh.normals, mesh.areas
    x = c[rows][:, None, :]
    local = np.arange(len(rows))
    if kind == "S":
        out = kernels.gamma(x - _offdiag_sources(x, c, rows)) * a[None, :]
        out[local, rows] = [self_term_S(a[i]) for i in rows]
        return out
    elif kind == "K" or kind == "D":
        out = kernels.kernel_K(x, _offdiag_sources(x, c, rows), nrm[None, :, :])
        out[local, rows] = 0.0
    elif kind == "Stilde":
        out = kernels.gamma(kernels.reflect(x) - c[None, :, :])
    elif kind == "Dtilde":
        out = kernels.kernel_Dtilde(x, c[None, :, :], nrm[None, :, :])
    else:
        raise ValueError(f"kind {kind} is not assembled blockwise")
    out *= a[None, :]
    if kind == "D":
        out[local, rows] -= 0.5
    return out


def assemble(kind: str, mesh: SurfaceMesh, workers: int | None = None) -> DenseOperator:
    """Dense matrix of operator ``kind`` on ``mesh``.

    ``Kstar`` and ``DtildeStar`` are the area-weighted transposes of ``K`` and
    ``Dtilde`` (see :func:`adjoint_discretization`).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if kind in IMAGE_KINDS and not mesh.vertices[:, -1].max() < 0:
        raise DepthViolationError(f"{kind} needs a mesh strictly below the plane")
    if kind in ("Kstar", "DtildeStar"):
        base = assemble("K" if kind == "Kstar" else "Dtilde", mesh, workers)
        return adjoint_discretization(base, mesh)

    n = mesh.n_panels
    matrix = np.empty((n, n))
    blocks = [np.arange(s, min(s + ROW_BLOCK, n)) for s in range(0, n, ROW_BLOCK)]

    def fill(rows):
        matrix[rows[0] : rows[-1] + 1] = _block(kind, mesh, rows)

    workers = workers or worker_count()
    if workers == 1 or len(blocks) == 1:
        for rows in blocks:
            fill(rows)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    return DenseOperator(kind, matrix, mesh.fingerprint, kind in IMAGE_KINDS)


def adjoint_discretization(op: DenseOperator, mesh: SurfaceMesh) -> DenseOperator:
    """Adjoint in the area-weighted inner product: W^-1 M^T W with W = diag(areas)."""
    if op.kind not in _ADJOINT:
        raise ValueError(f"no discrete adjoint defined for kind {op.kind!r}")
    if op.mesh_fingerprint != mesh.fingerprint:
        raise ValueError("operator was assembled on a different mesh")
    a = mesh.areas
    matrix = op.matrix.T * a[None, :] / a[:, None]
    kind = _ADJOINT[op.kind]
    return DenseOperator(kind, np.ascontiguousarray(matrix), op.mesh_fingerprint, kind in IMAGE_KINDS)


_MAGIC = b"HBEM"
_HEADER = struct.Struct("<4sBI7x")


def dump_operator(op: DenseOperator, path) -> None:
    """Debug dump: 16-byte header (magic, kind byte, u32 n) then row-major <f8 data."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, KINDS.index(op.kind), op.n))
        fh.write(np.ascontiguousarray(op.matrix, dtype="<f8").tobytes())


def load_operator(path, mesh_fingerprint: str = "") -> DenseOperator:
    raw = Path(path).read_bytes()
    magic, kind_byte, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not an HBEM matrix dump")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != n * n:
        raise ValueError("truncated matrix dump")
    kind = KINDS[kind_byte]
    return DenseOperator(kind, data.reshape(n, n).astype(float), mesh_fingerprint, kind in IMAGE_KINDS)
