"""Triangle mesh, uniform Laplacian, vertex frames and segment queries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SkinCellsError

SEGMENT_SHRINK = 1e-4  # cm trimmed off both segment ends in intersection tests


@dataclass(eq=False)
class Mesh:
    """Rest-pose triangle mesh (positions in cm).

    Construction validates connectivity (indices in range, no degenerate
    triangles, every vertex used) and derives sorted per-vertex neighbor
    lists plus per-vertex incident-triangle lists.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise SkinCellsError("vertices must have shape (V, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise SkinCellsError("triangles must have shape (T, 3)")
        nv = len(self.vertices)
        tris = self.triangles
        if len(tris) == 0:
            raise SkinCellsError("mesh has no triangles")
        if tris.min() < 0 or tris.max() >= nv:
            raise SkinCellsError(
                f"triangle index out of range (have {nv} vertices)"
            )
        degen = (
            (tris[:, 0] == tris[:, 1])
            | (tris[:, 1] == tris[:, 2])
            | (tris[:, 2] == tris[:, 0])
        )
        if degen.any():
            raise SkinCellsError(
                f"degenerate triangles (repeated vertex index): {np.nonzero(degen)[0].tolist()}"
            )

        edges = np.concatenate(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=0
        )
        edges = np.unique(np.concatenate([edges, edges[:, ::-1]], axis=0), axis=0)
        deg = np.bincount(edges[:, 0], minlength=nv)
        self.neighbor_offsets = np.concatenate(
            [np.zeros(1, dtype=np.int64), np.cumsum(deg)]
        )
        self.neighbor_flat = np.ascontiguousarray(edges[:, 1])
        self.vertex_repeat = np.repeat(np.arange(nv), deg)

        corners = tris.ravel()
        counts = np.bincount(corners, minlength=nv)
        unused = np.nonzero(counts == 0)[0]
        if unused.size:
            raise SkinCellsError(
                f"vertices not referenced by any triangle: {unused.tolist()}"
            )
        order = np.argsort(corners, kind="stable")
        self.incident_flat = np.repeat(np.arange(len(tris)), 3)[order]
        self.incident_offsets = np.concatenate(
            [np.zeros(1, dtype=np.int64), np.cumsum(counts)]
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def neighbors(self, v: int) -> np.ndarray:
        """Sorted neighbor indices of vertex ``v``."""
        return self.neighbor_flat[self.neighbor_offsets[v] : self.neighbor_offsets[v + 1]]

    def incident_triangles(self, v: int) -> np.ndarray:
        return self.incident_flat[self.incident_offsets[v] : self.incident_offsets[v + 1]]


@dataclass(eq=False)
class LaplacianOperator:
    """Uniform (umbrella) graph Laplacian: L(X)_v = mean(N(v)) - X_v."""

    offsets: np.ndarray
    flat: np.ndarray
    inv_deg: np.ndarray
    vrep: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.inv_deg)

    def apply(self, positions: np.ndarray) -> np.ndarray:
        return apply_laplacian(self, positions)

    def apply_adjoint(self, vectors: np.ndarray) -> np.ndarray:
        """Transpose action, used to backpropagate through ``apply``."""
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if vectors.shape != (self.n_vertices, 3):
            raise SkinCellsError(
                f"expected ({self.n_vertices}, 3) input, got {vectors.shape}"
            )
        return kernels.laplacian_adjoint(
            self.offsets, self.flat, self.inv_deg, self.vrep, vectors
        )


def build_laplacian(mesh: Mesh) -> LaplacianOperator:
    deg = np.diff(mesh.neighbor_offsets)
    isolated = np.nonzero(deg == 0)[0]
    if isolated.size:
        raise SkinCellsError(f"isolated vertices (no neighbors): {isolated.tolist()}")
    return LaplacianOperator(
        offsets=mesh.neighbor_offsets,
        flat=mesh.neighbor_flat,
        inv_deg=1.0 / deg.astype(np.float64),
        vrep=mesh.vertex_repeat,
    )


def apply_laplacian(op: LaplacianOperator, positions: np.ndarray) -> np.ndarray:
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if positions.shape != (op.n_vertices, 3):
        raise SkinCellsError(
            f"expected ({op.n_vertices}, 3) positions, got {positions.shape}"
        )
    return kernels.laplacian_apply(op.offsets, op.flat, op.inv_deg, positions)


_AXES = np.eye(3)


def vertex_frames(mesh: Mesh, positions: np.ndarray) -> np.ndarray:
    """Per-vertex orthonormal frames, shape (V, 3, 3), columns (t, n x t, n).

    n is the normalized area-weighted normal of the incident triangles, t the
    edge to the lowest-index neighbor projected into the tangent plane. When
    the normal vanishes or the projected edge is shorter than 1e-9 the frame
    falls back to the global axis least aligned with n, so construction never
    fails.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if positions.shape != (mesh.n_vertices, 3):
        raise SkinCellsError(
            f"expected ({mesh.n_vertices}, 3) positions, got {positions.shape}"
        )
    tris = mesh.triangles
    p0 = positions[tris[:, 0]]
    raw = np.cross(positions[tris[:, 1]] - p0, positions[tris[:, 2]] - p0)
    nsum = np.zeros_like(positions)
    for col in range(3):
        np.add.at(nsum, tris[:, col], raw)
    nlen = np.linalg.norm(nsum, axis=1)
    degenerate_n = nlen < 1e-12
    normal = np.where(degenerate_n[:, None], _AXES[2], nsum / np.where(nlen, nlen, 1.0)[:, None])

    first_nbr = mesh.neighbor_flat[mesh.neighbor_offsets[:-1]]
    edge = positions[first_nbr] - positions
    tangent = edge - (edge * normal).sum(axis=1, keepdims=True) * normal
    tlen = np.linalg.norm(tangent, axis=1)
    bad = tlen < 1e-9
    if bad.any():
        axis = _AXES[np.argmin(np.abs(normal[bad]), axis=1)]
        fallback = axis - (axis * normal[bad]).sum(axis=1, keepdims=True) * normal[bad]
        tangent[bad] = fallback
        tlen = np.linalg.norm(tangent, axis=1)
    tangent /= tlen[:, None]

    frames = np.empty((mesh.n_vertices, 3, 3))
    frames[:, :, 0] = tangent
    frames[:, :, 1] = np.cross(normal, tangent)
    frames[:, :, 2] = normal
    return frames


def _segment_hits(mesh, starts, ends, excl_offsets, excl_flat):
    return kernels.segment_hits(
        mesh.vertices,
        mesh.triangles,
        np.ascontiguousarray(starts, dtype=np.float64),
        np.ascontiguousarray(ends, dtype=np.float64),
        np.ascontiguousarray(excl_offsets, dtype=np.int64),
        np.ascontiguousarray(excl_flat, dtype=np.int64),
        SEGMENT_SHRINK,
    )


def segment_intersects_mesh(mesh: Mesh, a, b, excluded=()) -> bool:
    """True iff segment (a, b), shrunk by 1e-4 cm at each end, hits a
    non-excluded triangle. Brute force over all triangles."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.array_equal(a, b):
        raise SkinCellsError("segment endpoints coincide")
    excl = np.asarray(sorted(excluded), dtype=np.int64)
    offsets = np.array([0, len(excl)], dtype=np.int64)
    return bool(_segment_hits(mesh, a[None], b[None], offsets, excl)[0])
