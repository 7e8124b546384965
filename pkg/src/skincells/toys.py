"""Small procedural assets used by the tests, benchmarks and examples.

Everything is centimeter-scale and deterministic.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh
from .skeleton import Skeleton


def two_bone_skeleton(length: float = 30.0, limit_deg: float = 60.0,
                      root_limit_deg: float = 0.0, axis: int = 0) -> Skeleton:
    """Root -> elbow -> tip chain of two equal bones along a coordinate axis."""
    offset = np.zeros(3)
    offset[axis] = 0.5 * length
    lim = np.array([[-limit_deg, limit_deg]] * 3)
    root_lim = np.array([[-root_limit_deg, root_limit_deg]] * 3)
    return Skeleton(
        names=["root", "elbow", "tip"],
        parents=np.array([-1, 0, 1]),
        offsets=np.array([np.zeros(3), offset, offset]),
        limits=np.stack([root_lim, lim, lim]),
    )


def cylinder_mesh(radius: float = 3.0, length: float = 30.0,
                  axial: int = 24, radial: int = 12, axis: int = 0,
                  capped: bool = True) -> Mesh:
    """Closed tube along a coordinate axis, starting at the origin.

    ``axial`` rings of ``radial`` vertices plus two cap centers; about
    ``axial * radial + 2`` vertices total.
    """
    ts = np.linspace(0.0, length, axial)
    angles = np.linspace(0.0, 2.0 * np.pi, radial, endpoint=False)
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1) * radius
    verts = []
    for t in ts:
        for cx, cy in ring:
            p = np.zeros(3)
            p[axis] = t
            p[(axis + 1) % 3] = cx
            p[(axis + 2) % 3] = cy
            verts.append(p)
    tris = []
    for a in range(axial - 1):
        for r in range(radial):
            i0 = a * radial + r
            i1 = a * radial + (r + 1) % radial
            j0 = i0 + radial
            j1 = i1 + radial
            tris.append((i0, i1, j0))
            tris.append((i1, j1, j0))
    if capped:
        c0 = len(verts)
        p = np.zeros(3)
        verts.append(p.copy())
        p = np.zeros(3)
        p[axis] = length
        verts.append(p)
        c1 = c0 + 1
        last = (axial - 1) * radial
        for r in range(radial):
            tris.append((c0, (r + 1) % radial, r))
            tris.append((c1, last + r, last + (r + 1) % radial))
    return Mesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def hex_prism_mesh(radius: float = 2.0, length: float = 10.0, axis: int = 0) -> Mesh:
    """Closed 12-vertex hexagonal prism (caps fan-triangulated, no centers)."""
    angles = np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    verts = []
    for t in (0.0, length):
        for a in angles:
            p = np.zeros(3)
            p[axis] = t
            p[(axis + 1) % 3] = radius * np.cos(a)
            p[(axis + 2) % 3] = radius * np.sin(a)
            verts.append(p)
    tris = []
    for r in range(6):
        i0, i1 = r, (r + 1) % 6
        j0, j1 = 6 + i0, 6 + i1
        tris.append((i0, i1, j0))
        tris.append((i1, j1, j0))
    for k in range(1, 5):  # caps as fans from vertex 0 / vertex 6
        tris.append((0, k + 1, k))
        tris.append((6, 6 + k, 6 + k + 1))
    return Mesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def grid_mesh(nx: int = 8, ny: int = 8, spacing: float = 1.0) -> Mesh:
    """Flat z=0 grid, triangles wound counter-clockwise seen from +z."""
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    verts = np.stack(
        [xs.ravel() * spacing, ys.ravel() * spacing, np.zeros(nx * ny)], axis=1
    )
    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = a + ny
            tris.append((a, b, a + 1))
            tris.append((a + 1, b, b + 1))
    return Mesh(verts, np.asarray(tris, dtype=np.int64))


def uv_sphere_mesh(radius: float = 5.0, rings: int = 8, segments: int = 12,
                   jitter: float = 0.0, seed: int = 0) -> Mesh:
    """Closed UV sphere; ``jitter`` perturbs vertices radially for irregular
    test geometry."""
    verts = [np.array([0.0, 0.0, radius])]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for k in range(segments):
            theta = 2.0 * np.pi * k / segments
            verts.append(
                radius
                * np.array(
                    [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
                )
            )
    verts.append(np.array([0.0, 0.0, -radius]))
    verts = np.asarray(verts)
    if jitter:
        rng = np.random.default_rng(seed)
        verts = verts * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=(len(verts), 1)))

    tris = []
    def ring_start(i):
        return 1 + (i - 1) * segments

    for k in range(segments):
        tris.append((0, ring_start(1) + k, ring_start(1) + (k + 1) % segments))
    for i in range(1, rings - 1):
        a = ring_start(i)
        b = ring_start(i + 1)
        for k in range(segments):
            k1 = (k + 1) % segments
            tris.append((a + k, b + k, a + k1))
            tris.append((a + k1, b + k, b + k1))
    south = len(verts) - 1
    a = ring_start(rings - 1)
    for k in range(segments):
        tris.append((south, a + (k + 1) % segments, a + k))
    return Mesh(verts, np.asarray(tris, dtype=np.int64))


def subdivide_midpoint(mesh: Mesh) -> Mesh:
    """One 1-to-4 split; original vertices keep their indices and positions."""
    verts = [p for p in mesh.vertices]
    edge_mid: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in edge_mid:
            edge_mid[key] = len(verts)
            verts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return edge_mid[key]

    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return Mesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def stick_figure_2d(scale: float = 10.0) -> Skeleton:
    """Flat 11-joint biped in the z=0 plane (pelvis, spine, head, two arms of
    two joints, two legs of two joints); handy for field rasterization."""
    s = scale
    names = [
        "pelvis", "spine", "head",
        "l_shoulder", "l_hand", "r_shoulder", "r_hand",
        "l_hip", "l_foot", "r_hip", "r_foot",
    ]
    parents = [-1, 0, 1, 1, 3, 1, 5, 0, 7, 0, 9]
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, 1.5 * s, 0.0],
            [0.0, 1.0 * s, 0.0],
            [-0.8 * s, 0.8 * s, 0.0],
            [-1.2 * s, -0.2 * s, 0.0],
            [0.8 * s, 0.8 * s, 0.0],
            [1.2 * s, -0.2 * s, 0.0],
            [-0.6 * s, -0.2 * s, 0.0],
            [-0.2 * s, -1.6 * s, 0.0],
            [0.6 * s, -0.2 * s, 0.0],
            [0.2 * s, -1.6 * s, 0.0],
        ]
    )
    limits = np.tile(np.array([[-45.0, 45.0]] * 3), (len(names), 1, 1))
    return Skeleton(names=names, parents=np.asarray(parents), offsets=offsets, limits=limits)
