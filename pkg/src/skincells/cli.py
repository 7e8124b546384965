"""Command-line pipeline: init -> optimize -> bake / pose / colorize, plus
field validation and the proximity/softmax baselines.

Exit codes: 0 success, 1 validation or runtime failure (stderr lines carry an
``error:`` prefix), 2 usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .errors import SkinCellsError
from .field import (
    initialize_cells,
    proximity_weights,
    softmax_field_eval,
    weight_field_eval,
)
from .kernels import backend_name
from .losses import LossWeights
from .optim import MODES, OptimizeConfig, optimize
from .skeleton import skinning_transforms
from .skinning import BakedWeights, bake_weights, lbs

VALIDATE_POINTS = 100_000


def _env_threads() -> int:
    try:
        return max(1, int(os.environ.get("SKINCELLS_THREADS", "1")))
    except ValueError:
        return 1


def _probe_box(skeleton, mesh=None, margin: float = 0.5):
    """Axis-aligned probe region: asset bounds grown by ``margin`` of the
    diagonal (at least 1 cm)."""
    pts = skeleton.rest_positions
    if mesh is not None:
        pts = np.concatenate([pts, mesh.vertices])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = max(float(np.linalg.norm(hi - lo)) * margin, 1.0)
    return lo - pad, hi + pad


def cmd_init(args) -> int:
    mesh = io.load_obj(args.mesh, scale=args.scale)
    skeleton = io.load_skeleton(args.skeleton, scale=args.scale)
    rng = np.random.default_rng(args.seed)
    cells = initialize_cells(skeleton, mesh, m=args.m, l=args.l, rng=rng)
    io.save_field(args.out, cells)
    print(f"wrote {args.out}: n={cells.n_joints} m={cells.n_sites} l={cells.l}")
    return 0


def cmd_optimize(args) -> int:
    mesh = io.load_obj(args.mesh, scale=args.scale)
    skeleton = io.load_skeleton(args.skeleton, scale=args.scale)
    cells = io.load_field(args.field, skeleton)
    config = OptimizeConfig(
        steps=args.steps,
        pool_size=args.pool,
        batch_size=args.batch,
        l=cells.l,
        m=cells.n_sites,
        loss_weights=LossWeights(
            lambda_dm=args.lambda_dm,
            lambda_loc=args.lambda_loc,
            lambda_sp=args.lambda_sp,
        ),
        seed=args.seed,
        mode=args.mode,
        threads=args.threads,
    )
    optimized, history = optimize(config, mesh, skeleton, cells)
    io.save_field(args.out, optimized)
    if args.history:
        io.save_history(args.history, history)
    if len(history):
        print(
            f"optimized {args.steps} steps [{backend_name()} kernels]: "
            f"loss {history[0, 1]:.6g} -> {history[-1, 1]:.6g}"
        )
    print(f"wrote {args.out}")
    return 0


def cmd_bake(args) -> int:
    mesh = io.load_obj(args.mesh, scale=args.scale)
    cells = io.load_field(args.field)
    baked = bake_weights(
        cells,
        mesh.vertices,
        l=args.l,
        clamp_sparsity=args.sparse_clamp == "on",
    )
    io.export_weights(args.out, baked)
    print(f"wrote {args.out}: {baked.n_vertices} vertices, <= {args.l} influences")
    return 0


def cmd_pose(args) -> int:
    mesh = io.load_obj(args.mesh, scale=args.scale)
    skeleton = io.load_skeleton(args.skeleton, scale=args.scale)
    pose, translation = io.load_pose(args.pose, skeleton)
    transforms = skinning_transforms(skeleton, pose, translation)
    if args.weights:
        weights = io.load_weights(args.weights)
    else:
        cells = io.load_field(args.field, skeleton)
        weights = bake_weights(cells, mesh.vertices, clamp_sparsity=True)
    deformed = lbs(mesh.vertices, weights, transforms)
    io.save_obj(args.out, deformed, mesh.triangles)
    print(f"wrote {args.out}")
    return 0


def cmd_validate(args) -> int:
    skeleton = io.load_skeleton(args.skeleton, scale=args.scale)
    cells = io.load_field(args.field, skeleton)
    mesh = io.load_obj(args.mesh, scale=args.scale) if args.mesh else None
    rng = np.random.default_rng(args.seed)
    lo, hi = _probe_box(skeleton, mesh)
    points = lo + (hi - lo) * rng.uniform(size=(args.points, 3))

    if args.method == "softmax":
        sites = cells.centers.reshape(-1, 3)
        w = softmax_field_eval(sites, points, beta=args.beta, precision=args.precision)
        bad = int((~np.isfinite(w).all(axis=1)).sum())
        print(f"softmax[{args.precision}, beta={args.beta:g}]: "
              f"nan_points={bad} of {args.points}")
        return 1 if bad else 0

    failures = []
    if not np.isfinite(cells.pack()).all():
        failures.append("non-finite field parameters")
    leaves = [j for j in range(skeleton.n_joints) if skeleton.joint_bones(j).size == 0]
    if leaves:
        # informational: freshly initialized fields keep leaf sites in a
        # 0.05 cm ball around the joint; optimization may move them
        dev = max(
            float(np.linalg.norm(cells.centers[j] - skeleton.rest_positions[j], axis=1).max())
            for j in leaves
        )
        print(f"leaf_site_max_dev={dev:.6g}")
    w = weight_field_eval(cells, points)
    if not np.isfinite(w).all():
        failures.append("non-finite weights")
    err = np.abs(w.sum(axis=1) - 1.0).max()
    print(f"partition_of_unity: max |sum - 1| = {err:.3g}")
    if err > 1e-6:
        failures.append("partition of unity violated")
    wc = weight_field_eval(cells, points, clamp_sparsity=True)
    if not np.isfinite(wc).all():
        failures.append("non-finite clamped weights")
    nnz = int((wc > 0.0).sum(axis=1).max())
    print(f"sparsity_at_c0: max nonzeros = {nnz} (l = {cells.l})")
    if nnz > cells.l:
        failures.append("sparsity guarantee violated")
    errc = np.abs(wc.sum(axis=1) - 1.0).max()
    if errc > 1e-6:
        failures.append("clamped partition of unity violated")
    for f in failures:
        print(f"error: {f}", file=sys.stderr)
    print("validate:", "FAIL" if failures else "PASS")
    return 1 if failures else 0


def cmd_colorize(args) -> int:
    mesh = io.load_obj(args.mesh, scale=args.scale)
    if args.weights:
        weights = io.load_weights(args.weights)
        if weights.n_vertices != mesh.n_vertices:
            raise SkinCellsError("weights and mesh disagree on vertex count")
        io.export_colored_ply(args.out, mesh, weights)
    else:
        cells = io.load_field(args.field)
        dense = weight_field_eval(cells, mesh.vertices)
        io.export_colored_ply(args.out, mesh, dense)
    print(f"wrote {args.out}")
    return 0


def cmd_baseline(args) -> int:
    mesh = io.load_obj(args.mesh, scale=args.scale)
    skeleton = io.load_skeleton(args.skeleton, scale=args.scale)
    if args.method == "proximity":
        dense = proximity_weights(mesh.vertices, skeleton, l=args.l, falloff=args.falloff)
    else:
        dense = softmax_field_eval(
            skeleton.rest_positions, mesh.vertices, beta=args.beta, precision="double"
        )
        if not np.isfinite(dense).all():
            raise SkinCellsError("softmax baseline produced non-finite weights")
    baked = BakedWeights.from_dense(dense)
    io.export_weights(args.out, baked)
    print(f"wrote {args.out}")
    return 0


def _add_scale(p):
    p.add_argument("--scale", type=float, default=1.0,
                   help="uniform scale applied to loaded assets (cm per unit)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skincells",
        description="Sparse skinning weight fields optimized over sampled poses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="seed a field from a skeleton rig")
    p.add_argument("--mesh", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--m", type=int, default=6, help="sites per cell")
    p.add_argument("--l", type=int, default=4, help="max influences per vertex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_scale(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("optimize", help="optimize field parameters over sampled poses")
    p.add_argument("--mesh", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--field", required=True, help="input field file")
    p.add_argument("--out", required=True, help="output field file")
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--pool", type=int, default=1024, help="pose pool size")
    p.add_argument("--batch", type=int, default=16, help="poses per iteration (20 matches the alternative setup)")
    p.add_argument("--lambda-dm", type=float, default=1.0, dest="lambda_dm")
    p.add_argument("--lambda-loc", type=float, default=6000.0, dest="lambda_loc")
    p.add_argument("--lambda-sp", type=float, default=1.0, dest="lambda_sp")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="loss history CSV path")
    p.add_argument("--threads", type=int, default=_env_threads(),
                   help="worker threads (default: SKINCELLS_THREADS or 1)")
    _add_scale(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("bake", help="bake per-vertex weights from a field")
    p.add_argument("--field", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--l", type=int, default=4)
    p.add_argument("--sparse-clamp", choices=("on", "off"), default="on",
                   dest="sparse_clamp",
                   help="clamp every cell's relaxation c to 0 (guaranteed sparsity)")
    p.add_argument("--out", required=True)
    _add_scale(p)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("pose", help="deform a mesh with a pose")
    p.add_argument("--mesh", required=True)
    p.add_argument("--skeleton", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights")
    group.add_argument("--field")
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    _add_scale(p)
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("validate", help="probe a field for partition of unity, sparsity and finiteness")
    p.add_argument("--field", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--mesh")
    p.add_argument("--points", type=int, default=VALIDATE_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("skincell", "softmax"), default="skincell")
    p.add_argument("--beta", type=float, default=50.0, help="softmax sharpness")
    p.add_argument("--precision", choices=("single", "double"), default="single",
                   help="softmax evaluation precision")
    _add_scale(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("colorize", help="export a weight-blend colored PLY")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--field")
    group.add_argument("--weights")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    _add_scale(p)
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("baseline", help="proximity / softmax baseline weights")
    p.add_argument("--mesh", required=True)
    p.add_argument("--skeleton", required=True)
    p.add_argument("--method", choices=("proximity", "softmax"), default="proximity")
    p.add_argument("--falloff", type=float, default=3.5)
    p.add_argument("--beta", type=float, default=1.0, help="softmax sharpness")
    p.add_argument("--l", type=int, default=4)
    p.add_argument("--out", required=True)
    _add_scale(p)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SkinCellsError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
