"""Hierarchical rig: forward kinematics, skinning transforms, pose sampling
and closest-point queries on bone segments.

Conventions: joint angles are intrinsic X-then-Y-then-Z Euler rotations in
degrees; bones run parent -> child and are rigidly carried by the parent
joint's skinning transform; all lengths are cm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SkinCellsError

DEFAULT_LIMIT_DEG = 45.0


def euler_to_matrix(angles_deg: np.ndarray) -> np.ndarray:
    """Rotation matrices for intrinsic XYZ Euler angles, degrees. (..., 3) -> (..., 3, 3)."""
    a = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    cx, cy, cz = np.cos(a[..., 0]), np.cos(a[..., 1]), np.cos(a[..., 2])
    sx, sy, sz = np.sin(a[..., 0]), np.sin(a[..., 1]), np.sin(a[..., 2])
    out = np.empty(a.shape[:-1] + (3, 3))
    # R = Rx @ Ry @ Rz
    out[..., 0, 0] = cy * cz
    out[..., 0, 1] = -cy * sz
    out[..., 0, 2] = sy
    out[..., 1, 0] = cx * sz + sx * sy * cz
    out[..., 1, 1] = cx * cz - sx * sy * sz
    out[..., 1, 2] = -sx * cy
    out[..., 2, 0] = sx * sz - cx * sy * cz
    out[..., 2, 1] = sx * cz + cx * sy * sz
    out[..., 2, 2] = cx * cy
    return out


def _rigid_inverse(mats: np.ndarray) -> np.ndarray:
    rot = mats[..., :3, :3]
    out = np.zeros_like(mats)
    out[..., :3, :3] = np.swapaxes(rot, -1, -2)
    out[..., :3, 3] = -np.einsum("...ji,...j->...i", rot, mats[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


@dataclass(eq=False)
class Skeleton:
    """Topologically ordered joint hierarchy with per-axis angle limits.

    ``parents[j] == -1`` marks the single root; every other parent index must
    be smaller than its child's. ``limits`` has shape (n, 3, 2) in degrees.
    ``rest_rotations`` default to identity (offsets fully determine the rest
    pose, matching the skeleton file schema).
    """

    names: list[str]
    parents: np.ndarray
    offsets: np.ndarray
    limits: np.ndarray
    rest_rotations: np.ndarray | None = None

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.float64)
        self.limits = np.ascontiguousarray(self.limits, dtype=np.float64)
        n = len(self.parents)
        if n == 0:
            raise SkinCellsError("skeleton has no joints")
        if len(self.names) != n or self.offsets.shape != (n, 3):
            raise SkinCellsError("joint name/parent/offset counts disagree")
        if self.limits.shape != (n, 3, 2):
            raise SkinCellsError("limits must have shape (n, 3, 2)")
        roots = np.nonzero(self.parents < 0)[0]
        if len(roots) != 1:
            raise SkinCellsError(f"expected exactly one root joint, found {len(roots)}")
        bad = np.nonzero(self.parents >= np.arange(n))[0]
        if bad.size:
            raise SkinCellsError(
                f"joints must be topologically ordered (parent before child); offending: {bad.tolist()}"
            )
        if (self.limits[..., 0] > self.limits[..., 1]).any():
            raise SkinCellsError("joint limits must satisfy min <= max")
        if self.rest_rotations is None:
            self.rest_rotations = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        else:
            self.rest_rotations = np.ascontiguousarray(self.rest_rotations, dtype=np.float64)
            if self.rest_rotations.shape != (n, 3, 3):
                raise SkinCellsError("rest_rotations must have shape (n, 3, 3)")

        self.rest_globals = self._forward(np.zeros((n, 3)), np.zeros(3))
        self._rest_inverse = _rigid_inverse(self.rest_globals)
        self.rest_positions = self.rest_globals[:, :3, 3].copy()
        # bones: (parent, child) pairs ordered by child index
        children = np.nonzero(self.parents >= 0)[0]
        self.bones = np.stack([self.parents[children], children], axis=1)
        self.bone_starts = self.rest_positions[self.bones[:, 0]]
        self.bone_ends = self.rest_positions[self.bones[:, 1]]

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_bones(self) -> int:
        return len(self.bones)

    def children(self, j: int) -> np.ndarray:
        return np.nonzero(self.parents == j)[0]

    def joint_bones(self, j: int) -> np.ndarray:
        """Indices of the bones driven by joint ``j`` (segments to its children)."""
        return np.nonzero(self.bones[:, 0] == j)[0]

    def _forward(self, pose, root_translation):
        n = self.n_joints
        rot = euler_to_matrix(pose)
        globals_ = np.empty((n, 4, 4))
        for j in range(n):
            local = np.eye(4)
            local[:3, :3] = self.rest_rotations[j] @ rot[j]
            local[:3, 3] = self.offsets[j]
            if self.parents[j] < 0:
                local[:3, 3] += root_translation
                globals_[j] = local
            else:
                globals_[j] = globals_[self.parents[j]] @ local
        return globals_


def _check_pose(skeleton, pose):
    pose = np.asarray(pose, dtype=np.float64).reshape(-1, 3)
    if pose.shape != (skeleton.n_joints, 3):
        raise SkinCellsError(
            f"pose must provide 3 angles for each of {skeleton.n_joints} joints"
        )
    return pose


def forward_kinematics(skeleton: Skeleton, pose, root_translation=None) -> np.ndarray:
    """Global 4x4 joint transforms for a pose of per-joint Euler angles (deg)."""
    pose = _check_pose(skeleton, pose)
    t = np.zeros(3) if root_translation is None else np.asarray(root_translation, dtype=np.float64)
    return skeleton._forward(pose, t)


def skinning_transforms(skeleton: Skeleton, pose, root_translation=None) -> np.ndarray:
    """Per-joint rest-to-posed affine transforms T_j (identity at rest)."""
    globals_ = forward_kinematics(skeleton, pose, root_translation)
    return np.einsum("jab,jbc->jac", globals_, skeleton._rest_inverse)


def sample_pose(skeleton: Skeleton, rng: np.random.Generator) -> np.ndarray:
    """Per-joint angles drawn independently Uniform(min, max) within limits."""
    lo = skeleton.limits[..., 0]
    hi = skeleton.limits[..., 1]
    return lo + (hi - lo) * rng.uniform(size=lo.shape)


def _segment_closest(points, starts, ends):
    """Closest points on segments for a batch of query points.

    points (V, 3) against segments (B, 3): returns u (V, B) and the closest
    points (V, B, 3). Degenerate segments collapse to their start.
    """
    seg = ends - starts
    seg_len2 = (seg * seg).sum(axis=1)
    safe = np.where(seg_len2 > 0.0, seg_len2, 1.0)
    diff = points[:, None, :] - starts[None, :, :]
    u = (diff * seg[None, :, :]).sum(axis=2) / safe[None, :]
    u = np.clip(np.where(seg_len2[None, :] > 0.0, u, 0.0), 0.0, 1.0)
    closest = starts[None, :, :] + u[:, :, None] * seg[None, :, :]
    return u, closest


def closest_point_on_skeleton(skeleton: Skeleton, x):
    """(bone index, u in [0,1], point, distance) of the nearest bone segment.

    Ties break toward the lowest bone index.
    """
    if skeleton.n_bones == 0:
        raise SkinCellsError("skeleton has no bones")
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    u, closest = _segment_closest(x, skeleton.bone_starts, skeleton.bone_ends)
    dist = np.linalg.norm(closest[0] - x, axis=1)
    b = int(np.argmin(dist))
    return b, float(u[0, b]), closest[0, b].copy(), float(dist[b])


def closest_points_on_skeleton(skeleton: Skeleton, points):
    """Vectorized form of :func:`closest_point_on_skeleton` for (V, 3) input."""
    if skeleton.n_bones == 0:
        raise SkinCellsError("skeleton has no bones")
    points = np.asarray(points, dtype=np.float64)
    u, closest = _segment_closest(points, skeleton.bone_starts, skeleton.bone_ends)
    dist = np.linalg.norm(closest - points[:, None, :], axis=2)
    b = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    return b, u[rows, b], closest[rows, b], dist[rows, b]


def joint_distances(skeleton: Skeleton, points):
    """Per-joint distance field used by the proximity baseline, shape (V, n).

    A joint's geometry is the union of its outgoing bones; leaf joints reduce
    to their rest position.
    """
    points = np.asarray(points, dtype=np.float64)
    dist_j = np.empty((len(points), skeleton.n_joints))
    if skeleton.n_bones:
        _, closest = _segment_closest(points, skeleton.bone_starts, skeleton.bone_ends)
        bone_dist = np.linalg.norm(closest - points[:, None, :], axis=2)
    for j in range(skeleton.n_joints):
        bones = skeleton.joint_bones(j)
        if bones.size:
            dist_j[:, j] = bone_dist[:, bones].min(axis=1)
        else:
            dist_j[:, j] = np.linalg.norm(points - skeleton.rest_positions[j], axis=1)
    return dist_j
