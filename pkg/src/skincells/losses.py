"""Deformation-quality objectives and the spring set they act on.

Three pose-dependent losses drive the field optimization: a DeltaMush-style
smoothness residual (Laplacian delta expressed in surface frames), a spring
location term tying vertices to their closest skeleton attachment, and a
sparsity term penalizing the displacement caused by clamping weights to the
top ``l`` influences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SkinCellsError
from .mesh import Mesh, _segment_hits, build_laplacian, vertex_frames
from .skeleton import Skeleton, closest_points_on_skeleton
from .field import renormalized_top_l
from .skinning import lbs

ORTHOGONALITY_COS_MAX = 0.3  # |cos| gate between spring and bone directions
LOCATION_STABILIZER = 1e-2   # cm, floor in the relative-stretch denominator


@dataclass(eq=False)
class LossWeights:
    """Scale factors of the total objective."""

    lambda_dm: float = 1.0
    lambda_loc: float = 6000.0
    lambda_sp: float = 1.0

    def __post_init__(self):
        if min(self.lambda_dm, self.lambda_loc, self.lambda_sp) < 0.0:
            raise SkinCellsError("loss weights must be nonnegative")

    @classmethod
    def fine_mesh(cls) -> "LossWeights":
        """Preset prioritizing sparsity for fine meshes (avoids tearing)."""
        return cls(lambda_sp=1000.0)


@dataclass(eq=False)
class SpringSet:
    """Rest-pose vertex-to-skeleton attachments (at most one per vertex).

    ``u`` parameterizes the attachment along bone ``bone_idx``; rest lengths
    are strictly positive. Attachments rigidly follow the joint driving their
    bone (the bone's parent joint).
    """

    vertex_idx: np.ndarray
    bone_idx: np.ndarray
    u: np.ndarray
    rest_length: np.ndarray

    def __post_init__(self):
        self.vertex_idx = np.asarray(self.vertex_idx, dtype=np.int64)
        self.bone_idx = np.asarray(self.bone_idx, dtype=np.int64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.rest_length = np.asarray(self.rest_length, dtype=np.float64)
        m = len(self.vertex_idx)
        if not (len(self.bone_idx) == len(self.u) == len(self.rest_length) == m):
            raise SkinCellsError("spring arrays disagree on length")
        if len(np.unique(self.vertex_idx)) != m:
            raise SkinCellsError("a vertex may carry at most one spring")
        if (self.rest_length <= 0.0).any():
            raise SkinCellsError("spring rest lengths must be positive")

    def __len__(self) -> int:
        return len(self.vertex_idx)

    def rest_attachments(self, skeleton: Skeleton) -> np.ndarray:
        starts = skeleton.bone_starts[self.bone_idx]
        ends = skeleton.bone_ends[self.bone_idx]
        return starts + self.u[:, None] * (ends - starts)

    def driving_joints(self, skeleton: Skeleton) -> np.ndarray:
        return skeleton.bones[self.bone_idx, 0]


def build_springs(mesh: Mesh, skeleton: Skeleton) -> SpringSet:
    """Attach each vertex to its closest skeleton point, then prune.

    A spring survives only if it is near-orthogonal to its bone
    (|cos| <= 0.3) and its segment does not intersect the mesh anywhere
    (triangles incident to the vertex excluded). Vertices may end up with no
    spring.
    """
    bones, u, points, dist = closest_points_on_skeleton(skeleton, mesh.vertices)
    keep = dist > 1e-9

    bone_dir = skeleton.bone_ends - skeleton.bone_starts
    bone_dir = bone_dir / np.maximum(np.linalg.norm(bone_dir, axis=1, keepdims=True), 1e-12)
    spring_dir = (mesh.vertices - points) / np.maximum(dist[:, None], 1e-12)
    cosang = np.abs((spring_dir * bone_dir[bones]).sum(axis=1))
    keep &= cosang <= ORTHOGONALITY_COS_MAX

    cand = np.nonzero(keep)[0]
    if cand.size:
        counts = np.diff(mesh.incident_offsets)[cand]
        offsets = np.concatenate([np.zeros(1, dtype=np.int64), np.cumsum(counts)])
        excl = np.concatenate(
            [mesh.incident_triangles(int(v)) for v in cand]
        ) if counts.sum() else np.empty(0, dtype=np.int64)
        hits = _segment_hits(mesh, mesh.vertices[cand], points[cand], offsets, excl)
        keep[cand[hits]] = False

    idx = np.nonzero(keep)[0]
    return SpringSet(
        vertex_idx=idx,
        bone_idx=bones[idx],
        u=u[idx],
        rest_length=dist[idx],
    )


def spring_distances(
    springs: SpringSet,
    positions: np.ndarray,
    transforms: np.ndarray,
    skeleton: Skeleton,
) -> np.ndarray:
    """Current vertex-to-attachment distances; attachments move rigidly with
    the joint driving their bone."""
    positions = np.asarray(positions, dtype=np.float64)
    att = posed_attachments(springs, transforms, skeleton)
    return np.linalg.norm(positions[springs.vertex_idx] - att, axis=1)


def posed_attachments(springs: SpringSet, transforms: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    rest = springs.rest_attachments(skeleton)
    t = transforms[springs.driving_joints(skeleton)]
    return np.einsum("mab,mb->ma", t[:, :3, :3], rest) + t[:, :3, 3]


def loss_deltamush(mesh: Mesh, rest: np.ndarray, deformed: np.ndarray) -> float:
    """Squared norm of L(X) - B L(rest) with B the rest-to-deformed frame
    rotation per vertex.

    Evaluated in surface-frame coordinates (both Laplacian deltas rotated
    into their own vertex frame), which is norm-equivalent and exactly zero
    when deformed == rest. The frames are per-evaluation constants; no
    gradient flows through their construction.
    """
    lap = build_laplacian(mesh)
    res = frame_coordinates(vertex_frames(mesh, deformed), lap.apply(deformed)) - \
        frame_coordinates(vertex_frames(mesh, rest), lap.apply(rest))
    return float((res * res).sum())


def frame_coordinates(frames: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Express per-vertex vectors in their frame: F^T v per vertex."""
    return np.einsum("vba,vb->va", frames, vectors)


def loss_location(springs: SpringSet, rest_distances, posed_distances) -> float:
    """Sum of squared relative spring stretches, stabilized by 1e-2 cm."""
    rest = np.asarray(rest_distances, dtype=np.float64)
    posed = np.asarray(posed_distances, dtype=np.float64)
    if rest.shape != posed.shape or len(rest) != len(springs):
        raise SkinCellsError("distance arrays must match the spring count")
    rel = (posed - rest) / (rest + LOCATION_STABILIZER)
    return float((rel * rel).sum())


def loss_sparsity(rest: np.ndarray, weights: np.ndarray, transforms: np.ndarray, l: int) -> float:
    """Squared displacement between skinning with the full weights and with
    the renormalized top-``l`` weights (selection mask held fixed).

    Exactly zero when every vertex already has at most ``l`` influences.
    """
    weights = np.asarray(weights, dtype=np.float64)
    clamped = renormalized_top_l(weights, l)
    if np.array_equal(clamped, weights):
        return 0.0
    diff = lbs(rest, weights, transforms) - lbs(rest, clamped, transforms)
    return float((diff * diff).sum())


def total_loss(parts, weights: LossWeights | None = None) -> float:
    """lambda_dm * L_dm + lambda_loc * L_loc + lambda_sp * L_sp."""
    if weights is None:
        weights = LossWeights()
    dm, loc, sp = (float(p) for p in parts)
    return weights.lambda_dm * dm + weights.lambda_loc * loc + weights.lambda_sp * sp
