"""Gradient machinery and the pose-sampled training loop.

The objective follows the pipeline: evaluate the weight field at the rest
vertices (pose-independent), then for every pose in the batch skin the mesh
and accumulate the smoothness, location and sparsity terms. Gradients flow
through a small reverse-mode tape (:mod:`skincells.autodiff`) whose heavy
leaves (field evaluation, LBS blending, the Laplacian) are fused kernels with
hand-written adjoints.

Differentiation conventions: min/sort/top selections route their subgradient
to the achieving index (lowest index on ties), and the surface-frame rotation
of the smoothness loss plus the top-l mask of the sparsity loss are constants
of each evaluation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np

from . import kernels
from .autodiff import Var
from .errors import NonFiniteLossError, SkinCellsError
from .field import SkinCellSet, cell_stride
from .losses import (
    LOCATION_STABILIZER,
    LossWeights,
    SpringSet,
    build_springs,
    posed_attachments,
)
from .mesh import Mesh, build_laplacian, vertex_frames
from .skeleton import Skeleton, sample_pose, skinning_transforms
from .skinning import lbs_deltas

MODES = ("full", "falloff", "falloff-sparse")


# --- differentiable primitives ----------------------------------------------


def field_weights_var(params: Var, points: np.ndarray, n: int, m: int, l: int,
                      clamp_sparsity: bool = False) -> Var:
    """Fused field evaluation as a tape node, (V, n) weights."""
    w, d, kstar, jl, ssum = kernels.field_forward(
        params.value, n, m, points, l, clamp_sparsity
    )

    def vjp(g):
        return kernels.field_backward(
            params.value, n, m, points, l, clamp_sparsity,
            w, d, kstar, jl, ssum, np.ascontiguousarray(g),
        )

    return Var(w, [(params, vjp)])


def lbs_blend_var(weights: Var, deltas: np.ndarray, rest: np.ndarray) -> Var:
    """Skinning in delta form: rest + sum_j w_j (T_j x - x)."""
    value = rest + np.einsum("vj,jvc->vc", weights.value, deltas)
    return Var(value, [(weights, lambda g: np.einsum("vc,jvc->vj", g, deltas))])


def laplacian_var(x: Var, lap) -> Var:
    return Var(lap.apply(x.value), [(x, lambda g: lap.apply_adjoint(np.ascontiguousarray(g)))])


def frame_coordinates_var(x: Var, frames: np.ndarray) -> Var:
    """Per-vertex change into (constant) frame coordinates: F^T x."""
    value = np.einsum("vba,vb->va", frames, x.value)
    return Var(value, [(x, lambda g: np.einsum("vba,va->vb", frames, g))])


# --- objective assembly -------------------------------------------------------


@dataclass(eq=False)
class OptimStatics:
    """Pose-independent data shared by every loss evaluation."""

    mesh: Mesh
    skeleton: Skeleton
    springs: SpringSet
    lap: object
    rest: np.ndarray
    rest_lap: np.ndarray
    rest_frames: np.ndarray
    rest_spring_len: np.ndarray
    inv_spring_denom: np.ndarray
    n: int
    m: int
    l: int


def prepare_statics(mesh: Mesh, skeleton: Skeleton, cells: SkinCellSet,
                    l: int | None = None) -> OptimStatics:
    if cells.n_joints != skeleton.n_joints:
        raise SkinCellsError("cell count does not match skeleton joint count")
    lap = build_laplacian(mesh)
    rest = mesh.vertices
    springs = build_springs(mesh, skeleton)
    return OptimStatics(
        mesh=mesh,
        skeleton=skeleton,
        springs=springs,
        lap=lap,
        rest=rest,
        rest_lap=lap.apply(rest),
        rest_frames=vertex_frames(mesh, rest),
        rest_spring_len=springs.rest_length,
        inv_spring_denom=1.0 / (springs.rest_length + LOCATION_STABILIZER),
        n=cells.n_joints,
        m=cells.n_sites,
        l=l if l is not None else cells.l,
    )


def _top_mask(w: np.ndarray, l: int):
    order = np.argsort(-w, axis=1, kind="stable")[:, :l]
    mask = np.zeros(w.shape, dtype=bool)
    mask[np.arange(len(w))[:, None], order] = True
    dropped = ((w != 0.0) & ~mask).any(axis=1)
    return mask, dropped


@dataclass(eq=False)
class BatchResult:
    """Tape nodes of one batch evaluation plus its frozen per-evaluation
    structure (frame rotations, top-l masks) for finite-difference probes."""

    total: Var
    dm: Var
    loc: Var
    sp: Var
    struct: dict


def evaluate_batch(
    params: Var | np.ndarray,
    statics: OptimStatics,
    transforms_batch: np.ndarray,
    loss_weights: LossWeights,
    struct: dict | None = None,
    threads: int = 1,
) -> BatchResult:
    """Mean loss terms of a pose batch as tape nodes.

    Passing ``struct`` from a previous evaluation reuses its frame rotations
    and sparsity masks, which is what a finite-difference probe of the
    implemented (piecewise) objective needs. Results never depend on
    ``threads``; per-pose terms are reduced in pose order.
    """
    if not isinstance(params, Var):
        params = Var(np.asarray(params, dtype=np.float64))
    s = statics
    w = field_weights_var(params, s.rest, s.n, s.m, s.l)
    _check_finite("weight field", w.value)

    use_sp = s.l < s.n
    out_struct: dict = {}
    w2 = None
    if use_sp:
        if struct is not None:
            mask, dropped = struct["sp_mask"]
        else:
            mask, dropped = _top_mask(w.value, s.l)
        out_struct["sp_mask"] = (mask, dropped)
        kept = w * mask.astype(np.float64)
        ksum = kept.sum(axis=1, keepdims=True)
        dcol = dropped[:, None].astype(np.float64)
        # rows with nothing dropped divide by exactly 1.0 so they stay bit-equal
        w2 = kept / (ksum * dcol + (1.0 - dcol))

    rest_lap_coords = np.einsum("vba,vb->va", s.rest_frames, s.rest_lap)

    def pose_terms(b):
        transforms = transforms_batch[b]
        deltas = lbs_deltas(s.rest, transforms)
        x = lbs_blend_var(w, deltas, s.rest)
        if struct is not None:
            frames = struct["bases"][b]
        else:
            frames = vertex_frames(s.mesh, x.value)
        res = frame_coordinates_var(laplacian_var(x, s.lap), frames) - rest_lap_coords
        dm = (res * res).sum()

        if len(s.springs):
            att = posed_attachments(s.springs, transforms, s.skeleton)
            dvec = x.take(s.springs.vertex_idx) - att
            dist = (dvec * dvec).sum(axis=1).sqrt()
            rel = (dist - s.rest_spring_len) * s.inv_spring_denom
            loc = (rel * rel).sum()
        else:
            loc = Var(0.0)

        if use_sp:
            diff = x - lbs_blend_var(w2, deltas, s.rest)
            sp = (diff * diff).sum()
        else:
            sp = Var(0.0)
        return dm, loc, sp, frames

    nb = len(transforms_batch)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            terms = list(pool.map(pose_terms, range(nb)))
    else:
        terms = [pose_terms(b) for b in range(nb)]
    out_struct["bases"] = [t[3] for t in terms]

    scale = 1.0 / nb
    dm = _mean([t[0] for t in terms], scale)
    loc = _mean([t[1] for t in terms], scale)
    sp = _mean([t[2] for t in terms], scale)
    for name, term in (("loss_dm", dm), ("loss_loc", loc), ("loss_sp", sp)):
        _check_finite(name, term.value)
    total = (
        loss_weights.lambda_dm * dm
        + loss_weights.lambda_loc * loc
        + loss_weights.lambda_sp * sp
    )
    return BatchResult(total=total, dm=dm, loc=loc, sp=sp, struct=out_struct)


def _mean(terms, scale):
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * scale


def _check_finite(name, value):
    if not np.isfinite(value).all():
        raise NonFiniteLossError(f"{name} evaluated to a non-finite value")


# --- gradients and Adam -------------------------------------------------------


def gradient(objective, params: np.ndarray, frozen: np.ndarray | None = None) -> np.ndarray:
    """Reverse-mode gradient of ``objective`` (a Var -> scalar Var callable).

    Frozen entries report a zero gradient.
    """
    p = Var(np.asarray(params, dtype=np.float64))
    out = objective(p)
    _check_finite("objective", out.value)
    out.backward()
    g = np.zeros_like(p.value) if p.grad is None else np.asarray(p.grad, dtype=np.float64).copy()
    if frozen is not None:
        g[frozen] = 0.0
    return g


@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, num_params: int, lr: float = 1e-3) -> "AdamState":
        return cls(m=np.zeros(num_params), v=np.zeros(num_params), lr=lr)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns (new params, new state)."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise SkinCellsError("parameter/gradient/state shapes disagree")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=step)


# --- training loop ------------------------------------------------------------


@dataclass(eq=False)
class OptimizeConfig:
    """Training-loop settings. Internal math is always double precision."""

    steps: int = 1500
    pool_size: int = 1024
    batch_size: int = 16
    l: int = 4
    m: int = 6
    loss_weights: LossWeights = dataclass_field(default_factory=LossWeights)
    seed: int = 0
    mode: str = "full"
    lr: float = 1e-3
    threads: int = 1
    precision: str = "double"

    def __post_init__(self):
        if self.steps < 0:
            raise SkinCellsError("steps must be >= 0")
        if self.pool_size < 1 or not (1 <= self.batch_size <= self.pool_size):
            raise SkinCellsError("need 1 <= batch_size <= pool_size")
        if self.l < 1 or self.m < 1:
            raise SkinCellsError("l and m must be >= 1")
        if self.mode not in MODES:
            raise SkinCellsError(f"mode must be one of {MODES}")
        if self.threads < 1:
            raise SkinCellsError("threads must be >= 1")
        if self.precision != "double":
            raise SkinCellsError("only double-precision optimization is supported")


def freeze_mask(n: int, m: int, mode: str) -> np.ndarray:
    """Boolean mask of parameters held fixed in the given ablation mode."""
    if mode not in MODES:
        raise SkinCellsError(f"mode must be one of {MODES}")
    stride = cell_stride(m)
    frozen = np.zeros(n * stride, dtype=bool)
    if mode == "full":
        return frozen
    frozen[:] = True
    per_cell = frozen.reshape(n, stride)
    per_cell[:, stride - 1] = False  # log falloff always free
    if mode == "falloff-sparse":
        per_cell[:, stride - 2] = False  # log sparsity relaxation
    return frozen


HISTORY_COLUMNS = ("step", "loss", "loss_dm", "loss_loc", "loss_sp")


def optimize(config: OptimizeConfig, mesh: Mesh, skeleton: Skeleton,
             cells: SkinCellSet, callback=None):
    """Optimize the field parameters over a pool of sampled poses.

    The pose pool is drawn once, shuffled once, and consumed cyclically in
    batches. Returns the optimized cells and a (steps, 5) history array with
    columns ``HISTORY_COLUMNS`` (batch means; ``loss`` is lambda-weighted).
    ``callback(step, params)`` runs after each update, e.g. for parameter
    trail averaging or snapshotting.
    """
    statics = prepare_statics(mesh, skeleton, cells, l=config.l)
    rng = np.random.default_rng(config.seed)
    poses = np.stack([sample_pose(skeleton, rng) for _ in range(config.pool_size)])
    transforms = np.stack([skinning_transforms(skeleton, p) for p in poses])
    order = rng.permutation(config.pool_size)

    params = cells.pack()
    frozen = freeze_mask(statics.n, statics.m, config.mode)
    state = AdamState.init(len(params), lr=config.lr)
    history = np.zeros((config.steps, 5))

    for step in range(config.steps):
        take = (step * config.batch_size + np.arange(config.batch_size)) % config.pool_size
        batch = transforms[order[take]]
        params_var = Var(params)
        try:
            result = evaluate_batch(params_var, statics, batch,
                                    config.loss_weights, threads=config.threads)
        except NonFiniteLossError as err:
            raise NonFiniteLossError(f"iteration {step}: {err}") from err
        result.total.backward()
        grads = params_var.grad if params_var.grad is not None else np.zeros_like(params)
        grads = np.asarray(grads, dtype=np.float64).copy()
        grads[frozen] = 0.0
        params, state = adam_step(state, params, grads)
        history[step] = (
            step,
            float(result.total.value),
            float(result.dm.value),
            float(result.loc.value),
            float(result.sp.value),
        )
        if callback is not None:
            callback(step, params)

    out = SkinCellSet.unpack(params, statics.n, statics.m, config.l,
                             joint_names=cells.joint_names)
    return out, history
