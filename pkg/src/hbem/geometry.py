"""Closed triangulated surfaces and cavity placement.

Meshes are flat-panel triangulations with one collocation point (the
centroid) per panel.  A :class:`SurfaceMesh` is immutable once built; every
derived array is computed once and marked read-only so meshes can be shared
freely between threads.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "GeometryError",
    "MeshFormatError",
    "OpenSurfaceError",
    "DepthViolationError",
    "Panel",
    "SurfaceMesh",
    "CavityScene",
    "icosphere",
    "ellipsoid",
    "refine",
    "load_mesh",
    "write_off",
    "place",
    "rotation_matrix",
]

CLOSURE_TOL = 1e-10
MAX_SUBDIVISIONS = 7


class GeometryError(ValueError):
    pass


class MeshFormatError(GeometryError):
    pass


class OpenSurfaceError(GeometryError):
    pass


class DepthViolationError(GeometryError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Panel:
    vertices: np.ndarray
    centroid: np.ndarray
    normal: np.ndarray
    area: float


class SurfaceMesh:
    """Closed, consistently oriented triangle mesh with outward normals.

    Construction validates the surface: every edge must be shared by exactly
    two faces traversing it in opposite directions, no panel may be
    degenerate, and the area-weighted normals must sum to zero.  Set
    ``fix_orientation`` to flip a globally inward-oriented surface instead of
    rejecting it.
    """

    def __init__(self, vertices, faces, *, fix_orientation: bool = False):
        vertices = np.array(vertices, dtype=np.float64)
        faces = np.array(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshFormatError("vertices must have shape (V, 3)")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshFormatError("non-triangle face")
        if len(faces) == 0:
            raise MeshFormatError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshFormatError("face index out of range")
        if not np.all(np.isfinite(vertices)):
            raise MeshFormatError("non-finite vertex coordinate")
        _check_edges(faces)
        tri = vertices[faces]
        signed_volume = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0
        if signed_volume < 0.0:
            if not fix_orientation:
                raise GeometryError("surface is oriented inward (negative enclosed volume)")
            faces = faces[:, ::-1]

        self.vertices = _frozen(vertices)
        self.faces = _frozen(faces)
        if np.any(self.areas <= 0.0):
            raise GeometryError(f"zero-area panel(s): {np.flatnonzero(self.areas <= 0.0)[:5]}")
        if self.closure_residual > CLOSURE_TOL * self.total_area:
            raise OpenSurfaceError(
                f"closure residual {self.closure_residual:.3e} exceeds tolerance"
            )
        if self.enclosed_volume <= 0.0:
            raise GeometryError("surface encloses no volume")

    @cached_property
    def panel_vertices(self) -> np.ndarray:
        return _frozen(self.vertices[self.faces])

    @cached_property
    def _area_vectors(self) -> np.ndarray:
        v0, v1, v2 = (self.panel_vertices[:, k] for k in range(3))
        return 0.5 * np.cross(v1 - v0, v2 - v0)

    @cached_property
    def areas(self) -> np.ndarray:
        return _frozen(np.linalg.norm(self._area_vectors, axis=1))

    @cached_property
    def normals(self) -> np.ndarray:
        return _frozen(self._area_vectors / self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return _frozen(self.panel_vertices.mean(axis=1))

    @cached_property
    def diameters(self) -> np.ndarray:
        pv = self.panel_vertices
        edges = pv[:, [1, 2, 0]] - pv
        return _frozen(np.linalg.norm(edges, axis=2).max(axis=1))

    @property
    def n_panels(self) -> int:
        return len(self.faces)

    def __len__(self) -> int:
        return len(self.faces)

    @cached_property
    def panels(self) -> list[Panel]:
        return [
            Panel(self.panel_vertices[i], self.centroids[i], self.normals[i], float(self.areas[i]))
            for i in range(self.n_panels)
        ]

    @cached_property
    def total_area(self) -> float:
        return math.fsum(self.areas)

    @cached_property
    def enclosed_volume(self) -> float:
        return math.fsum(self.areas * np.einsum("ij,ij->i", self.centroids, self.normals)) / 3.0

    @cached_property
    def closure_residual(self) -> float:
        return float(np.linalg.norm(np.sum(self.areas[:, None] * self.normals, axis=0)))

    @cached_property
    def closure_vector(self) -> np.ndarray:
        """Exact sum of area-weighted normals.

        Each panel's area vector is half the sum of ``v_a x v_b`` over its
        directed edges.  On a closed, consistently oriented surface every
        directed edge is matched by its reverse, whose cross product is the
        bitwise negation, so the exactly rounded sum is identically zero.
        """
        pv = self.panel_vertices
        terms = 0.5 * np.cross(pv, pv[:, [1, 2, 0]]).reshape(-1, 3)
        return _frozen(np.array([math.fsum(terms[:, k]) for k in range(3)]))

    @cached_property
    def circumradius(self) -> float:
        """Largest vertex distance from the origin."""
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.faces, dtype="<i8").tobytes())
        return h.hexdigest()[:16]

    def transformed(self, matrix=None, shift=None, scale: float = 1.0) -> "SurfaceMesh":
        """Image of the mesh under v -> shift + scale * matrix @ v (same connectivity)."""
        v = self.vertices
        if matrix is not None:
            v = v @ np.asarray(matrix, dtype=float).T
        v = scale * v
        if shift is not None:
            v = np.asarray(shift, dtype=float) + v
        return SurfaceMesh(v, self.faces)

    def winding_number(self, x) -> float:
        """Solid-angle sum over panels; ~1 inside, ~0 outside."""
        from .kernels import kernel_K

        x = np.asarray(x, dtype=float)
        return float(np.sum(kernel_K(x, self.centroids, self.normals) * self.areas))

    def __repr__(self) -> str:
        return f"SurfaceMesh(panels={self.n_panels}, fingerprint={self.fingerprint})"


def _check_edges(faces: np.ndarray) -> None:
    directed = Counter()
    for a, b, c in faces.tolist():
        if a == b or b == c or a == c:
            raise GeometryError("degenerate face with repeated vertex")
        directed.update(((a, b), (b, c), (c, a)))
    for (a, b), count in directed.items():
        if count > 1:
            raise GeometryError(f"inconsistent panel orientation at edge ({a}, {b})")
        if (b, a) not in directed:
            raise OpenSurfaceError(f"open surface: boundary edge ({a}, {b})")


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    v /= np.linalg.norm(v, axis=1)[:, None]
    # orient every face outward
    tri = v[f]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    inward = np.einsum("ij,ij->i", nrm, tri.mean(axis=1)) < 0
    f[inward] = f[inward][:, ::-1]
    return v, f


def _subdivide(v: np.ndarray, f: np.ndarray, project: bool = True) -> tuple[np.ndarray, np.ndarray]:
    verts = list(map(tuple, v))
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = 0.5 * (np.asarray(verts[a]) + np.asarray(verts[b]))
            if project:
                m /= np.linalg.norm(m)
            idx = len(verts)
            verts.append(tuple(m))
            cache[key] = idx
        return idx

    out = []
    for a, b, c in f.tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(verts), np.array(out, dtype=np.int64)


def _unit_icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise GeometryError(f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}")
    v, f = _icosahedron()
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
    return v, f


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> SurfaceMesh:
    """Geodesic sphere with 20 * 4**subdivisions panels, centred at the origin.

    Built by recursive midpoint subdivision of the icosahedron with new
    vertices pushed out to the sphere.
    """
    if radius <= 0:
        raise GeometryError("radius must be positive")
    v, f = _unit_icosphere(subdivisions)
    return SurfaceMesh(radius * v, f)


def refine(mesh: SurfaceMesh, levels: int = 1) -> SurfaceMesh:
    """Split every panel into four flat ones, ``levels`` times (the surface is unchanged)."""
    if not 0 <= levels <= MAX_SUBDIVISIONS:
        raise GeometryError(f"levels must be in [0, {MAX_SUBDIVISIONS}], got {levels}")
    v, f = np.array(mesh.vertices), np.array(mesh.faces)
    for _ in range(levels):
        v, f = _subdivide(v, f, project=False)
    return SurfaceMesh(v, f)


def ellipsoid(subdivisions: int, semi_axes) -> SurfaceMesh:
    """Icosphere vertices stretched along the coordinate axes."""
    axes = np.asarray(semi_axes, dtype=float)
    if axes.shape != (3,) or np.any(axes <= 0):
        raise GeometryError("ellipsoid needs three positive semi-axes")
    v, f = _unit_icosphere(subdivisions)
    return SurfaceMesh(v * axes, f)


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx


def load_mesh(path) -> SurfaceMesh:
    """Read an ASCII OFF triangle mesh; globally inward files are flipped."""
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines or lines[0] != "OFF":
        raise MeshFormatError("missing OFF header")
    try:
        nv, nf = (int(t) for t in lines[1].split()[:2])
        vertices = [[float(t) for t in lines[2 + i].split()[:3]] for i in range(nv)]
        faces = []
        for i in range(nf):
            tokens = lines[2 + nv + i].split()
            if int(tokens[0]) != 3:
                raise MeshFormatError(f"non-triangle face on face line {i}")
            if len(tokens) < 4:
                raise MeshFormatError(f"truncated face line {i}")
            faces.append([int(t) for t in tokens[1:4]])
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"cannot parse OFF file {path}: {exc}") from exc
    if any(len(v) != 3 for v in vertices):
        raise MeshFormatError("vertex line with fewer than 3 coordinates")
    return SurfaceMesh(vertices, faces, fix_orientation=True)


def write_off(mesh: SurfaceMesh, path) -> None:
    out = ["OFF", f"{len(mesh.vertices)} {mesh.n_panels} 0"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(out) + "\n")


@dataclass(frozen=True)
class CavityScene:
    """Cavity z + epsilon * B strictly below the plane x_3 = 0."""

    base_mesh: SurfaceMesh
    center: tuple
    epsilon: float
    delta0: float | None = None

    def __post_init__(self):
        z = np.asarray(self.center, dtype=float)
        if z.shape != (3,):
            raise GeometryError("only d = 3 scenes are supported")
        object.__setattr__(self, "center", tuple(float(c) for c in z))
        delta0 = abs(z[-1]) if self.delta0 is None else float(self.delta0)
        object.__setattr__(self, "delta0", delta0)
        if not self.epsilon > 0:
            raise GeometryError("epsilon must be positive")
        if not z[-1] < 0:
            raise DepthViolationError(f"cavity centre must lie below the plane, got z_3={z[-1]}")
        if not delta0 > 0 or abs(z[-1]) < delta0:
            raise DepthViolationError(f"depth {abs(z[-1])} violates delta0={delta0}")
        if self.base_mesh.winding_number(np.zeros(3)) < 0.5:
            raise GeometryError("base shape must contain the origin")
        top = float(z[-1] + self.epsilon * self.base_mesh.vertices[:, -1].max())
        if not top < 0:
            raise DepthViolationError(f"scaled cavity reaches the plane (top vertex at {top})")

    @property
    def z(self) -> np.ndarray:
        return np.array(self.center)

    @cached_property
    def mesh(self) -> SurfaceMesh:
        return place(self)


def place(scene: CavityScene) -> SurfaceMesh:
    """Map the base mesh through v -> z + epsilon * v."""
    mesh = scene.base_mesh.transformed(shift=scene.z, scale=scene.epsilon)
    if not mesh.vertices[:, -1].max() < 0:
        raise DepthViolationError("placed cavity touches or crosses the plane")
    return mesh
