"""Linear blend skinning and field-to-vertex weight baking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SkinCellsError
from .field import SkinCellSet, renormalized_top_l, weight_field_eval

WEIGHT_SUM_TOL = 1e-4


@dataclass(eq=False)
class BakedWeights:
    """Per-vertex sparse (joint, weight) pairs, padded with index -1.

    Each row holds at most ``l`` influences summing to 1.
    """

    n_joints: int
    indices: np.ndarray  # (V, l) int64, -1 padding
    weights: np.ndarray  # (V, l) float64, 0 padding

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.indices.shape != self.weights.shape or self.indices.ndim != 2:
            raise SkinCellsError("indices and weights must share a (V, l) shape")
        used = self.indices >= 0
        if (self.indices >= self.n_joints).any():
            raise SkinCellsError("joint index out of range")
        if (self.weights < 0.0).any():
            raise SkinCellsError("weights must be nonnegative")
        if (self.weights[~used] != 0.0).any():
            raise SkinCellsError("padded entries must carry zero weight")
        sums = self.weights.sum(axis=1)
        if (np.abs(sums - 1.0) > 1e-6).any():
            raise SkinCellsError("per-vertex weights must sum to 1")

    @property
    def n_vertices(self) -> int:
        return len(self.indices)

    @property
    def max_influences(self) -> int:
        return self.indices.shape[1]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_vertices, self.n_joints))
        used = self.indices >= 0
        rows = np.nonzero(used)[0]
        dense[rows, self.indices[used]] = self.weights[used]
        return dense

    @classmethod
    def from_dense(cls, dense: np.ndarray, n_joints: int | None = None) -> "BakedWeights":
        dense = np.asarray(dense, dtype=np.float64)
        if n_joints is None:
            n_joints = dense.shape[1]
        width = max(1, int((dense != 0.0).sum(axis=1).max(initial=0)))
        order = np.argsort(-dense, axis=1, kind="stable")[:, :width]
        rows = np.arange(len(dense))[:, None]
        weights = dense[rows, order]
        indices = np.where(weights > 0.0, order, -1)
        weights = np.where(weights > 0.0, weights, 0.0)
        return cls(n_joints=n_joints, indices=indices, weights=weights)


def _dense_weights(weights, n_joints: int) -> np.ndarray:
    if isinstance(weights, BakedWeights):
        if weights.n_joints != n_joints:
            raise SkinCellsError("baked weights joint count mismatch")
        return weights.to_dense()
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != n_joints:
        raise SkinCellsError(f"weights must have shape (V, {n_joints})")
    return w


def lbs(rest_positions: np.ndarray, weights, transforms: np.ndarray) -> np.ndarray:
    """Deformed positions x' = sum_j w_j T_j x.

    Evaluated in delta form x + sum_j w_j (T_j x - x), which is identical for
    affine weights and reproduces the rest pose bit-exactly under identity
    transforms. Weights whose row sums deviate from 1 by more than 1e-4 are
    rejected.
    """
    rest = np.asarray(rest_positions, dtype=np.float64)
    transforms = np.asarray(transforms, dtype=np.float64)
    if transforms.ndim != 3 or transforms.shape[1:] != (4, 4):
        raise SkinCellsError("transforms must have shape (n, 4, 4)")
    w = _dense_weights(weights, len(transforms))
    if len(w) != len(rest):
        raise SkinCellsError("weights and positions disagree on vertex count")
    sums = w.sum(axis=1)
    if (np.abs(sums - 1.0) > WEIGHT_SUM_TOL).any():
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise SkinCellsError(
            f"weights must sum to 1 (vertex {worst} sums to {sums[worst]:.6g})"
        )
    deltas = lbs_deltas(rest, transforms)
    return rest + np.einsum("vj,jvc->vc", w, deltas)


def lbs_deltas(rest_positions: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """(n, V, 3) array of T_j x - x; zero wherever T_j is the identity."""
    rot = transforms[:, :3, :3]
    trans = transforms[:, :3, 3]
    moved = np.einsum("jab,vb->jva", rot, rest_positions) + trans[:, None, :]
    return moved - rest_positions[None, :, :]


def bake_weights(cells: SkinCellSet, positions: np.ndarray, l: int | None = None,
                 clamp_sparsity: bool = True) -> BakedWeights:
    """Evaluate the field at rest-pose positions, clamp to the top ``l``
    influences and renormalize.

    The field is a function of position only, so baking any resolution of the
    same shape (or a resampled mesh) agrees wherever positions coincide.
    """
    if l is None:
        l = cells.l
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    dense = weight_field_eval(cells, positions, clamp_sparsity=clamp_sparsity)
    dense = renormalized_top_l(dense, l)
    width = min(l, cells.n_joints)
    order = np.argsort(-dense, axis=1, kind="stable")[:, :width]
    rows = np.arange(len(dense))[:, None]
    weights = dense[rows, order]
    indices = np.where(weights > 0.0, order, -1)
    weights = np.where(weights > 0.0, weights, 0.0)
    return BakedWeights(n_joints=cells.n_joints, indices=indices, weights=weights)
