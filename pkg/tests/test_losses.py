import numpy as np
import pytest

from skincells import (
    LossWeights,
    Mesh,
    SkinCellsError,
    SpringSet,
    build_springs,
    loss_deltamush,
    loss_location,
    loss_sparsity,
    spring_distances,
    skinning_transforms,
    total_loss,
    toys,
)


def rigid(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    m = np.eye(4)
    m[:3, :3] = q
    m[:3, 3] = rng.normal(scale=2.0, size=3)
    return m


def nested_cylinders():
    """Outer shell whose springs to the axis must cross the inner wall."""
    inner = toys.cylinder_mesh(radius=2.0, length=30.0, axial=16, radial=12, capped=False)
    outer = toys.cylinder_mesh(radius=4.0, length=30.0, axial=16, radial=12, capped=False)
    verts = np.concatenate([inner.vertices, outer.vertices])
    tris = np.concatenate([inner.triangles, outer.triangles + inner.n_vertices])
    return Mesh(verts, tris), inner.n_vertices


class TestBuildSprings:
    def test_radial_cylinder_keeps_wall_springs(self, elbow_cylinder, elbow_skeleton):
        springs = build_springs(elbow_cylinder, elbow_skeleton)
        wall = 48 * 12  # vertices before the two cap centers
        kept = set(springs.vertex_idx.tolist())
        assert set(range(wall)) <= kept

    def test_axial_vertex_beyond_tip_pruned_by_orthogonality(self):
        mesh = toys.cylinder_mesh(radius=3.0, length=30.0, axial=24, radial=8)
        skeleton = toys.two_bone_skeleton(length=20.0)  # tube sticks out 10 cm
        springs = build_springs(mesh, skeleton)
        far_cap_center = mesh.n_vertices - 1  # on the axis at x=30
        assert far_cap_center not in springs.vertex_idx

    def test_occluded_springs_pruned(self, elbow_skeleton):
        mesh, n_inner = nested_cylinders()
        springs = build_springs(mesh, elbow_skeleton)
        kept = set(springs.vertex_idx.tolist())
        x = mesh.vertices[:, 0]
        interior = (x > 3.0) & (x < 27.0)
        inner_interior = np.nonzero(interior[:n_inner])[0]
        outer_interior = np.nonzero(interior)[0]
        outer_interior = outer_interior[outer_interior >= n_inner]
        assert set(inner_interior.tolist()) <= kept
        assert not (set(outer_interior.tolist()) & kept)

    def test_vertex_on_skeleton_gets_no_spring(self, elbow_skeleton):
        mesh = toys.cylinder_mesh(radius=3.0, length=30.0, axial=8, radial=6)
        springs = build_springs(mesh, elbow_skeleton)
        assert mesh.n_vertices - 2 not in springs.vertex_idx  # cap center on root
        assert (springs.rest_length > 0).all()


class TestSpringSet:
    def test_rejects_duplicate_vertices(self):
        with pytest.raises(SkinCellsError, match="at most one"):
            SpringSet([0, 0], [0, 1], [0.5, 0.5], [1.0, 1.0])

    def test_rejects_zero_rest_length(self):
        with pytest.raises(SkinCellsError, match="positive"):
            SpringSet([0], [0], [0.5], [0.0])


class TestSpringDistances:
    def test_rest_configuration_reproduces_rest_lengths(self, elbow_cylinder, elbow_skeleton):
        springs = build_springs(elbow_cylinder, elbow_skeleton)
        t = skinning_transforms(elbow_skeleton, np.zeros((3, 3)))
        d = spring_distances(springs, elbow_cylinder.vertices, t, elbow_skeleton)
        np.testing.assert_allclose(d, springs.rest_length, atol=1e-12)

    def test_shared_rigid_motion_preserves_lengths(self, elbow_cylinder, elbow_skeleton, rng):
        springs = build_springs(elbow_cylinder, elbow_skeleton)
        g = rigid(rng)
        posed = elbow_cylinder.vertices @ g[:3, :3].T + g[:3, 3]
        t = np.stack([g] * 3)
        d = spring_distances(springs, posed, t, elbow_skeleton)
        np.testing.assert_allclose(d, springs.rest_length, atol=1e-9)

    def test_one_hot_on_driving_joint_moves_rigidly(self, elbow_cylinder, elbow_skeleton, rng):
        springs = build_springs(elbow_cylinder, elbow_skeleton)
        pose = rng.uniform(-60, 60, size=(3, 3))
        t = skinning_transforms(elbow_skeleton, pose)
        drivers = springs.driving_joints(elbow_skeleton)
        posed = elbow_cylinder.vertices.copy()
        rot = t[:, :3, :3]
        tr = t[:, :3, 3]
        posed[springs.vertex_idx] = (
            np.einsum("mab,mb->ma", rot[drivers], elbow_cylinder.vertices[springs.vertex_idx])
            + tr[drivers]
        )
        d = spring_distances(springs, posed, t, elbow_skeleton)
        np.testing.assert_allclose(d, springs.rest_length, atol=1e-9)


class TestLossDeltaMush:
    def test_zero_at_rest(self, elbow_cylinder):
        rest = elbow_cylinder.vertices
        assert loss_deltamush(elbow_cylinder, rest, rest.copy()) == 0.0

    def test_rigid_motion_is_free(self, elbow_cylinder, rng):
        g = rigid(rng)
        moved = elbow_cylinder.vertices @ g[:3, :3].T + g[:3, 3]
        assert loss_deltamush(elbow_cylinder, elbow_cylinder.vertices, moved) < 1e-9

    def test_displaced_vertex_matches_direct_summation_oracle(self):
        mesh = toys.grid_mesh(5, 5)
        deformed = mesh.vertices.copy()
        deformed[12, 2] += 0.3  # center vertex out of plane
        got = loss_deltamush(mesh, mesh.vertices, deformed)
        want = _deltamush_oracle(mesh, mesh.vertices, deformed)
        assert abs(got - want) < 1e-10
        assert got > 0.0


def _neighbors_from_triangles(mesh):
    nbrs = [set() for _ in range(mesh.n_vertices)]
    for a, b, c in mesh.triangles:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return [sorted(s) for s in nbrs]


def _frames_oracle(mesh, positions):
    nbrs = _neighbors_from_triangles(mesh)
    frames = np.zeros((mesh.n_vertices, 3, 3))
    normals = np.zeros((mesh.n_vertices, 3))
    for a, b, c in mesh.triangles:
        cr = np.cross(positions[b] - positions[a], positions[c] - positions[a])
        for v in (a, b, c):
            normals[v] += cr
    for v in range(mesh.n_vertices):
        n = normals[v]
        n = n / np.linalg.norm(n) if np.linalg.norm(n) > 1e-12 else np.array([0.0, 0.0, 1.0])
        e = positions[nbrs[v][0]] - positions[v]
        t = e - (e @ n) * n
        t /= np.linalg.norm(t)
        frames[v] = np.stack([t, np.cross(n, t), n], axis=1)
    return frames


def _deltamush_oracle(mesh, rest, deformed):
    nbrs = _neighbors_from_triangles(mesh)
    def lap(x):
        return np.stack([np.mean([x[u] for u in nbrs[v]], axis=0) - x[v] for v in range(len(x))])
    fr = _frames_oracle(mesh, rest)
    fd = _frames_oracle(mesh, deformed)
    total = 0.0
    lx, lr = lap(deformed), lap(rest)
    for v in range(mesh.n_vertices):
        res = lx[v] - fd[v] @ fr[v].T @ lr[v]
        total += res @ res
    return total


class TestLossLocation:
    def test_zero_when_posed_equals_rest(self):
        springs = SpringSet([0, 1], [0, 0], [0.2, 0.8], [1.0, 2.0])
        assert loss_location(springs, springs.rest_length, springs.rest_length) == 0.0

    def test_single_spring_hand_value(self):
        springs = SpringSet([0], [0], [0.5], [1.0])
        got = loss_location(springs, np.array([1.0]), np.array([2.0]))
        assert got == pytest.approx((1.0 / 1.01) ** 2, rel=1e-12)
        assert got == pytest.approx(0.98030, abs=5e-6)

    def test_matches_scalar_loop_oracle(self, rng):
        m = 64
        springs = SpringSet(np.arange(m), np.zeros(m, dtype=int), rng.uniform(size=m), rng.uniform(0.5, 3.0, size=m))
        rest = springs.rest_length
        posed = rest + rng.normal(scale=0.3, size=m)
        got = loss_location(springs, rest, posed)
        want = sum(((p - r) / (r + 1e-2)) ** 2 for r, p in zip(rest, posed))
        assert abs(got - want) < 1e-12

    def test_shape_mismatch_rejected(self):
        springs = SpringSet([0], [0], [0.5], [1.0])
        with pytest.raises(SkinCellsError):
            loss_location(springs, np.ones(2), np.ones(1))


class TestLossSparsity:
    def test_zero_when_already_sparse(self, rng):
        rest = rng.normal(size=(10, 3))
        w = np.zeros((10, 4))
        w[:, 0] = 0.7
        w[:, 2] = 0.3
        t = np.stack([rigid(rng) for _ in range(4)])
        assert loss_sparsity(rest, w, t, l=2) == 0.0

    def test_zero_when_l_equals_n(self, rng):
        rest = rng.normal(size=(5, 3))
        w = rng.dirichlet(np.ones(3), size=5)
        t = np.stack([rigid(rng) for _ in range(3)])
        assert loss_sparsity(rest, w, t, l=3) == 0.0

    def test_matches_two_lbs_oracle(self, rng):
        from skincells import lbs
        from skincells.field import renormalized_top_l

        rest = rng.normal(scale=3.0, size=(20, 3))
        w = rng.dirichlet(np.ones(5), size=20)
        t = np.stack([rigid(rng) for _ in range(5)])
        got = loss_sparsity(rest, w, t, l=2)
        diff = lbs(rest, w, t) - lbs(rest, renormalized_top_l(w, 2), t)
        assert abs(got - (diff * diff).sum()) < 1e-10
        assert got > 0.0


class TestTotalLoss:
    def test_zero_parts(self):
        assert total_loss((0.0, 0.0, 0.0)) == 0.0

    def test_default_weighting(self):
        assert total_loss((1.0, 1.0, 1.0)) == 6002.0

    def test_mixed_parts(self):
        assert total_loss((0.5, 0.001, 2.0)) == pytest.approx(8.5)

    def test_fine_mesh_preset(self):
        lw = LossWeights.fine_mesh()
        assert (lw.lambda_dm, lw.lambda_loc, lw.lambda_sp) == (1.0, 6000.0, 1000.0)

    def test_rejects_negative_weights(self):
        with pytest.raises(SkinCellsError):
            LossWeights(lambda_dm=-1.0)


class TestRestPoseInvariants:
    def test_all_losses_zero_at_rest_with_identity(self, elbow_cylinder, elbow_skeleton):
        springs = build_springs(elbow_cylinder, elbow_skeleton)
        rest = elbow_cylinder.vertices
        t = np.stack([np.eye(4)] * 3)
        w = np.zeros((elbow_cylinder.n_vertices, 3))
        w[:, 0] = 1.0
        posed = spring_distances(springs, rest, t, elbow_skeleton)
        assert loss_deltamush(elbow_cylinder, rest, rest.copy()) == 0.0
        assert loss_location(springs, springs.rest_length, posed) <= 1e-12
        assert loss_sparsity(rest, w, t, l=2) == 0.0
