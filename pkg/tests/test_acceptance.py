"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
report. The heavier end-to-end runs are shared session fixtures.
"""

import time

import numpy as np
import pytest

from skincells import (
    LossWeights,
    OptimizeConfig,
    SkinCellSet,
    bake_weights,
    initialize_cells,
    io,
    lbs,
    loss_deltamush,
    loss_location,
    loss_sparsity,
    optimize,
    softmax_field_eval,
    spring_distances,
    toys,
    weight_field_eval,
)
from skincells.autodiff import Var
from skincells.losses import build_springs
from skincells.optim import evaluate_batch, prepare_statics
from skincells.skeleton import sample_pose, skinning_transforms

from conftest import random_cells


def report(criterion, detail):
    print(f"ACCEPTANCE {criterion}: PASS ({detail})")


# --- shared end-to-end fixture runs -------------------------------------------


@pytest.fixture(scope="session")
def fixture_cells(elbow_cylinder, elbow_skeleton):
    return initialize_cells(
        elbow_skeleton, elbow_cylinder, m=6, l=4, rng=np.random.default_rng(0)
    )


def _run(elbow_cylinder, elbow_skeleton, fixture_cells, lambda_loc):
    config = OptimizeConfig(
        steps=300,
        pool_size=1024,
        batch_size=16,
        l=4,
        m=6,
        seed=0,
        loss_weights=LossWeights(lambda_loc=lambda_loc),
    )
    start = time.perf_counter()
    cells, history = optimize(config, elbow_cylinder, elbow_skeleton, fixture_cells)
    return cells, history, time.perf_counter() - start


@pytest.fixture(scope="session")
def run_default(elbow_cylinder, elbow_skeleton, fixture_cells):
    return _run(elbow_cylinder, elbow_skeleton, fixture_cells, 6000.0)


@pytest.fixture(scope="session")
def run_low_location(elbow_cylinder, elbow_skeleton, fixture_cells):
    return _run(elbow_cylinder, elbow_skeleton, fixture_cells, 600.0)


# --- criteria ------------------------------------------------------------------


def test_criterion_01_sparsity_guarantee():
    start = time.perf_counter()
    seeds = iter(range(100))
    checked = 0
    for l in (1, 2, 4, 8):
        for _ in range(5):  # 20 parameter sets total
            rng = np.random.default_rng(next(seeds))
            n = int(rng.integers(8, 13))
            cells = random_cells(rng, n=n, m=4, l=l)
            pts = rng.uniform(-10.0, 10.0, size=(100_000, 3))
            w = weight_field_eval(cells, pts, clamp_sparsity=True)
            nnz = (w > 0.0).sum(axis=1)
            assert nnz.max() <= l, f"sparsity violated for l={l}"
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
            checked += len(pts)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(1, f"{checked:,} clamped probes, zero violations, {elapsed:.1f}s")


def test_criterion_02_partition_of_unity():
    worst = 0.0
    for seed, l in ((1, 1), (2, 2), (3, 4), (4, 8)):
        rng = np.random.default_rng(seed)
        cells = random_cells(rng, n=10, m=3, l=l)
        pts = rng.uniform(-12.0, 12.0, size=(100_000, 3))
        for clamp in (False, True):
            w = weight_field_eval(cells, pts, clamp_sparsity=clamp)
            worst = max(worst, float(np.abs(w.sum(axis=1) - 1.0).max()))
    assert worst <= 1e-6
    report(2, f"max |sum(w) - 1| = {worst:.2e} incl. one-hot fallback rows")


def test_criterion_03_proximity_reduction():
    rng = np.random.default_rng(9)
    n, m, r = 6, 5, 2.1
    centers = rng.normal(scale=6.0, size=(n, m, 3))
    cells = SkinCellSet(
        centers=centers,
        log_diag=np.zeros((n, m, 3)),
        off_diag=np.zeros((n, m, 3)),
        log_t=np.full((n, m), np.log(1e-3)),
        log_c=np.full(n, np.log(1e6)),
        log_r=np.full(n, np.log(r)),
        l=4,
    )
    pts = rng.normal(scale=7.0, size=(10_000, 3))
    got = weight_field_eval(cells, pts)
    # independent proximity oracle over the same site geometry
    d = np.linalg.norm(pts[:, None, None, :] - centers[None], axis=3).min(axis=2)
    assert d.min() > 1e-3
    scores = d ** (-r)
    want = scores / scores.sum(axis=1, keepdims=True)
    dev = np.abs(got - want).max()
    assert dev < 1e-6
    report(3, f"max deviation from proximity oracle = {dev:.2e}")


def test_criterion_04_stability_vs_softmax():
    start = time.perf_counter()
    skeleton = toys.stick_figure_2d(scale=10.0)
    cells = initialize_cells(skeleton, m=6, l=4, rng=np.random.default_rng(0))
    sites = cells.centers.reshape(-1, 3)
    span = np.linspace(-45.0, 45.0, 256)
    gx, gy = np.meshgrid(span, span)
    pixels = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)

    site_dist = np.linalg.norm(pixels[:, None, :] - sites[None], axis=2).min(axis=1)
    far = site_dist > 3.0
    assert far.any()
    soft = softmax_field_eval(sites, pixels, beta=50.0, precision="single")
    nan_far = int((~np.isfinite(soft[far]).all(axis=1)).sum())
    assert nan_far >= 1

    w = weight_field_eval(cells, pixels)
    assert np.isfinite(w).all()
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(4, f"softmax NaN pixels beyond d=3: {nan_far}; cell field 100% finite; {elapsed:.1f}s")


def test_criterion_05_gradient_correctness(prism_rig):
    mesh, skeleton = prism_rig
    cells = initialize_cells(skeleton, mesh, m=3, l=2, rng=np.random.default_rng(21))
    statics = prepare_statics(mesh, skeleton, cells)
    pose_rng = np.random.default_rng(22)
    transforms = np.stack(
        [skinning_transforms(skeleton, sample_pose(skeleton, pose_rng)) for _ in range(2)]
    )
    lw = LossWeights()
    base_params = cells.pack()
    perturb = np.random.default_rng(23)
    h = 1e-5
    worst = {"loss_dm": 0.0, "loss_loc": 0.0, "loss_sp": 0.0, "total": 0.0}
    checked = dict.fromkeys(worst, 0)
    for _ in range(10):
        params = base_params + perturb.normal(scale=0.05, size=base_params.shape)
        grads = {}
        struct = None
        for name in worst:
            pv = Var(params)
            result = evaluate_batch(pv, statics, transforms, lw, struct=struct)
            struct = result.struct
            node = {"loss_dm": result.dm, "loss_loc": result.loc,
                    "loss_sp": result.sp, "total": result.total}[name]
            node.backward()
            grads[name] = np.zeros_like(params) if pv.grad is None else pv.grad.copy()
        for i in range(len(params)):
            plus = params.copy()
            plus[i] += h
            minus = params.copy()
            minus[i] -= h
            rp = evaluate_batch(plus, statics, transforms, lw, struct=struct)
            rm = evaluate_batch(minus, statics, transforms, lw, struct=struct)
            for name, hi, lo in (
                ("loss_dm", rp.dm, rm.dm),
                ("loss_loc", rp.loc, rm.loc),
                ("loss_sp", rp.sp, rm.sp),
                ("total", rp.total, rm.total),
            ):
                fp = float(hi.value)
                fm = float(lo.value)
                fd = (fp - fm) / (2 * h)
                g = grads[name][i]
                # central differences cannot resolve discrepancies below their
                # own roundoff floor eps*|f|/h; skip coordinates without signal
                fd_floor = 10.0 * np.finfo(float).eps * max(abs(fp), abs(fm)) / h
                if abs(g) > 1e-8:
                    checked[name] += 1
                    if abs(g - fd) > fd_floor:
                        rel = abs(g - fd) / abs(g)
                        worst[name] = max(worst[name], rel)
                        assert rel < 1e-4, f"{name}[{i}]: analytic {g} vs fd {fd}"
    report(
        5,
        "max rel err "
        + ", ".join(f"{k}={worst[k]:.1e} ({checked[k]} coords)" for k in worst),
    )


def test_criterion_06_rest_pose_zeros(elbow_cylinder, elbow_skeleton, fixture_cells):
    rest = elbow_cylinder.vertices
    identity = np.stack([np.eye(4)] * 3)
    springs = build_springs(elbow_cylinder, elbow_skeleton)
    w = weight_field_eval(fixture_cells, rest)

    dm = loss_deltamush(elbow_cylinder, rest, rest.copy())
    posed = spring_distances(springs, rest, identity, elbow_skeleton)
    loc = loss_location(springs, springs.rest_length, posed)
    sp = loss_sparsity(rest, w, identity, l=2)
    assert dm <= 1e-12 and loc <= 1e-12 and sp <= 1e-12

    skinned = lbs(rest, w, identity)
    assert np.array_equal(skinned, rest)
    report(6, f"losses at rest = ({dm:.1e}, {loc:.1e}, {sp:.1e}); identity LBS bit-exact")


def test_criterion_07_end_to_end_fixture(
    elbow_cylinder, elbow_skeleton, fixture_cells, run_default
):
    cells, history, elapsed = run_default
    first = history[:50, 1].mean()
    last = history[-50:, 1].mean()
    assert last <= 0.5 * first
    assert history[-100:, 1].mean() <= history[:100, 1].mean()
    assert elapsed < 300.0

    springs = build_springs(elbow_cylinder, elbow_skeleton)
    pose = np.zeros((3, 3))
    pose[1, 2] = 60.0
    transforms = skinning_transforms(elbow_skeleton, pose)

    def max_relative_stretch(c):
        baked = bake_weights(c, elbow_cylinder.vertices)
        posed = lbs(elbow_cylinder.vertices, baked, transforms)
        d = spring_distances(springs, posed, transforms, elbow_skeleton)
        return float(
            (np.abs(d - springs.rest_length) / (springs.rest_length + 1e-2)).max()
        )

    stretch_init = max_relative_stretch(fixture_cells)
    stretch_opt = max_relative_stretch(cells)
    assert stretch_opt < stretch_init
    report(
        7,
        f"loss {first:.0f} -> {last:.0f} (ratio {last / first:.2f} <= 0.5), "
        f"60-degree stretch {stretch_init:.3f} -> {stretch_opt:.3f}, {elapsed:.0f}s",
    )


def test_criterion_08_location_weight_tradeoff(run_default, run_low_location):
    _, hist_hi, _ = run_default      # lambda_loc = 6000
    _, hist_lo, _ = run_low_location  # lambda_loc = 600
    dm_hi, loc_hi = hist_hi[-50:, 2].mean(), hist_hi[-50:, 3].mean()
    dm_lo, loc_lo = hist_lo[-50:, 2].mean(), hist_lo[-50:, 3].mean()
    assert loc_hi < loc_lo
    assert dm_hi > dm_lo
    report(
        8,
        f"raising lambda_loc 600->6000: loc {loc_lo:.5f}->{loc_hi:.5f} (down), "
        f"dm {dm_lo:.4f}->{dm_hi:.4f} (up)",
    )


def test_criterion_09_lod_consistency(run_default):
    cells, _, _ = run_default
    resolutions = {
        300: toys.cylinder_mesh(radius=3.0, length=30.0, axial=25, radial=12),
        600: toys.cylinder_mesh(radius=3.0, length=30.0, axial=48, radial=12),
        2400: toys.cylinder_mesh(radius=3.0, length=30.0, axial=100, radial=24),
    }
    worst = 0.0
    for label, mesh in resolutions.items():
        baked = bake_weights(cells, mesh.vertices).to_dense()
        field = weight_field_eval(cells, mesh.vertices, clamp_sparsity=True)
        worst = max(worst, float(np.abs(baked - field).max()))
        assert abs(mesh.n_vertices - label) < 0.1 * label
    assert worst <= 0.05
    report(9, f"bake vs exact field across 3 LODs: max Linf dev = {worst:.1e}")


def test_criterion_10_serialization(tmp_path):
    rng = np.random.default_rng(31)
    cells = random_cells(rng, n=80, m=6, l=4, names=[f"j{i}" for i in range(80)])
    path = tmp_path / "field.skcl"
    io.save_field(path, cells)
    size = path.stat().st_size
    payload = size - 24
    assert payload == 4 * 80 * (10 * 6 + 2) == 19840

    again = io.load_field(path)
    np.testing.assert_array_equal(
        again.pack(), cells.pack().astype("<f4").astype(np.float64)
    )
    again.joint_names = cells.joint_names  # the file stores a name hash only
    io.save_field(tmp_path / "again.skcl", again)
    assert (tmp_path / "again.skcl").read_bytes() == path.read_bytes()

    small = random_cells(rng, n=2, m=3, l=2)
    io.save_field(tmp_path / "small.skcl", small)
    assert (tmp_path / "small.skcl").stat().st_size == 24 + 4 * 2 * 32
    report(10, f"f32 round trip bit-exact; n=80,m=6 payload {payload} B (~19.8 KB)")


def test_criterion_11_ablation_modes(elbow_cylinder, elbow_skeleton, fixture_cells):
    before = fixture_cells.pack()
    stride = before.size // 3
    for mode, free in (("falloff", 1), ("falloff-sparse", 2)):
        config = OptimizeConfig(
            steps=40, pool_size=64, batch_size=8, l=4, m=6, seed=0, mode=mode
        )
        cells, _ = optimize(config, elbow_cylinder, elbow_skeleton, fixture_cells)
        after = cells.pack()
        moved = 0
        for j in range(3):
            frozen_before = before[j * stride : (j + 1) * stride - free]
            frozen_after = after[j * stride : (j + 1) * stride - free]
            assert frozen_before.tobytes() == frozen_after.tobytes()
            live_before = before[(j + 1) * stride - free : (j + 1) * stride]
            live_after = after[(j + 1) * stride - free : (j + 1) * stride]
            moved += int((live_before != live_after).sum())
        assert moved > 0  # the unfrozen block does optimize
    report(11, "frozen blocks byte-identical; only {r} / {r, c} move per mode")


def test_criterion_12_cli_determinism(tmp_path):
    import subprocess
    import sys

    mesh = toys.cylinder_mesh(radius=3.0, length=30.0, axial=10, radial=8)
    skeleton = toys.two_bone_skeleton(length=30.0, limit_deg=60.0)
    io.save_obj(tmp_path / "tube.obj", mesh.vertices, mesh.triangles)
    io.save_skeleton(tmp_path / "rig.json", skeleton)

    def run(tag):
        field = tmp_path / f"{tag}.skcl"
        hist = tmp_path / f"{tag}.csv"
        for cmd in (
            ["init", "--mesh", tmp_path / "tube.obj", "--skeleton", tmp_path / "rig.json",
             "--seed", "5", "--out", field],
            ["optimize", "--mesh", tmp_path / "tube.obj", "--skeleton", tmp_path / "rig.json",
             "--field", field, "--out", tmp_path / f"{tag}_opt.skcl",
             "--steps", "25", "--pool", "32", "--batch", "8", "--seed", "5",
             "--threads", "1", "--history", hist],
        ):
            res = subprocess.run(
                [sys.executable, "-m", "skincells", *map(str, cmd)],
                capture_output=True, text=True,
            )
            assert res.returncode == 0, res.stderr
        return hist.read_bytes(), (tmp_path / f"{tag}_opt.skcl").read_bytes()

    hist_a, field_a = run("a")
    hist_b, field_b = run("b")
    assert hist_a == hist_b
    assert field_a == field_b
    report(12, "two seeded cmd_optimize runs: loss CSVs and field files byte-identical")
