import numpy as np
import pytest

from skincells import (
    BakedWeights,
    SkinCellsError,
    bake_weights,
    lbs,
    toys,
    weight_field_eval,
)

from conftest import random_cells


def translation(t):
    m = np.eye(4)
    m[:3, 3] = t
    return m


def rigid(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    m = np.eye(4)
    m[:3, :3] = q
    m[:3, 3] = rng.normal(scale=3.0, size=3)
    return m


class TestLBS:
    def test_identity_transforms_are_bit_exact(self, rng):
        rest = rng.normal(scale=5.0, size=(40, 3))
        w = rng.dirichlet(np.ones(3), size=40)
        out = lbs(rest, w, np.stack([np.eye(4)] * 3))
        np.testing.assert_array_equal(out, rest)

    def test_one_hot_translation(self):
        rest = np.array([[1.0, 2.0, 3.0]])
        transforms = np.stack([translation([1.0, 0.0, 0.0]), np.eye(4)])
        out = lbs(rest, np.array([[1.0, 0.0]]), transforms)
        np.testing.assert_allclose(out, [[2.0, 2.0, 3.0]])

    def test_blended_translations(self):
        rest = np.array([[0.0, 0.0, 0.0]])
        transforms = np.stack([translation([1, 0, 0]), translation([0, 1, 0])])
        out = lbs(rest, np.array([[0.5, 0.5]]), transforms)
        np.testing.assert_allclose(out, [[0.5, 0.5, 0.0]])

    def test_unnormalized_weights_rejected(self, rng):
        rest = rng.normal(size=(3, 3))
        with pytest.raises(SkinCellsError, match="sum to 1"):
            lbs(rest, np.full((3, 2), 0.6), np.stack([np.eye(4)] * 2))

    def test_shared_rigid_transform_moves_everything(self, rng):
        rest = rng.normal(scale=4.0, size=(25, 3))
        w = rng.dirichlet(np.ones(4), size=25)
        g = rigid(rng)
        out = lbs(rest, w, np.stack([g] * 4))
        want = rest @ g[:3, :3].T + g[:3, 3]
        np.testing.assert_allclose(out, want, atol=1e-9)

    def test_baked_weights_accepted(self, rng):
        rest = rng.normal(size=(4, 3))
        baked = BakedWeights(
            n_joints=2,
            indices=np.array([[0], [1], [0], [1]]),
            weights=np.ones((4, 1)),
        )
        transforms = np.stack([translation([1, 0, 0]), translation([0, 0, 2])])
        out = lbs(rest, baked, transforms)
        np.testing.assert_allclose(out[0], rest[0] + [1, 0, 0])
        np.testing.assert_allclose(out[1], rest[1] + [0, 0, 2])


class TestBakedWeights:
    def test_round_trip_dense(self, rng):
        dense = rng.dirichlet(np.ones(5), size=20)
        dense = np.where(dense > 0.05, dense, 0.0)
        dense /= dense.sum(axis=1, keepdims=True)
        baked = BakedWeights.from_dense(dense)
        np.testing.assert_allclose(baked.to_dense(), dense, atol=1e-15)

    def test_rejects_bad_sums(self):
        with pytest.raises(SkinCellsError, match="sum"):
            BakedWeights(2, np.array([[0]]), np.array([[0.5]]))

    def test_rejects_negative_weights(self):
        with pytest.raises(SkinCellsError, match="nonnegative"):
            BakedWeights(2, np.array([[0, 1]]), np.array([[1.5, -0.5]]))


class TestBakeWeights:
    def test_single_joint_rig_gets_unity(self, rng):
        cells = random_cells(rng, n=1, m=2, l=1)
        baked = bake_weights(cells, rng.normal(size=(10, 3)))
        np.testing.assert_array_equal(baked.indices, np.zeros((10, 1)))
        np.testing.assert_array_equal(baked.weights, np.ones((10, 1)))

    def test_clamped_bake_equals_field_exactly(self, rng):
        cells = random_cells(rng, n=6, m=3, l=3)
        pts = rng.normal(scale=5.0, size=(200, 3))
        baked = bake_weights(cells, pts, clamp_sparsity=True)
        dense = weight_field_eval(cells, pts, clamp_sparsity=True)
        np.testing.assert_array_equal(baked.to_dense(), dense)

    def test_subdivided_mesh_agrees_at_shared_vertices(self, rng):
        mesh = toys.hex_prism_mesh()
        fine = toys.subdivide_midpoint(mesh)
        cells = random_cells(rng, n=4, m=3, l=2)
        coarse = bake_weights(cells, mesh.vertices)
        fine_baked = bake_weights(cells, fine.vertices)
        np.testing.assert_array_equal(
            coarse.to_dense(), fine_baked.to_dense()[: mesh.n_vertices]
        )

    def test_vertex_permutation_permutes_output(self, rng):
        cells = random_cells(rng, n=5, m=2, l=2)
        pts = rng.normal(scale=4.0, size=(50, 3))
        perm = rng.permutation(50)
        a = bake_weights(cells, pts).to_dense()
        b = bake_weights(cells, pts[perm]).to_dense()
        np.testing.assert_array_equal(a[perm], b)

    def test_respects_requested_l(self, rng):
        cells = random_cells(rng, n=8, m=2, l=8)
        baked = bake_weights(cells, rng.normal(scale=4.0, size=(50, 3)), l=3)
        assert ((baked.to_dense() > 0).sum(axis=1) <= 3).all()
        np.testing.assert_allclose(baked.weights.sum(axis=1), 1.0, atol=1e-12)
