"""Cell-based skinning weight field.

Each joint owns a cell of ``m`` anisotropic sites. A site measures a
Mahalanobis distance through a lower-triangular factor L (so the metric
matrix L^T L is symmetric positive definite), softened near the site by a
Huber-style modulation with per-site threshold t. The cell distance is the
minimum over its sites; normalized weights follow

    w_j(x) ~ (max(c_j, D_l(x) - d_j(x)) / d_j(x)) ** r_j

with D_l the l-th smallest cell distance at x. With every c_j clamped to
zero at most ``l`` weights are nonzero; positive c_j relaxes that bound so
distant cells keep gradient during optimization.

Parameters are stored both as structured arrays (:class:`SkinCellSet`) and as
one packed float vector shared by the kernels, the optimizer and the binary
field file: per joint, ``m`` sites of 10 scalars (center xyz, log diagonal of
L, lower off-diagonal of L, log t) followed by log c and log r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SkinCellsError
from .skeleton import Skeleton, joint_distances

PARAMS_PER_SITE = 10
LEAF_SITE_RADIUS = 0.05  # cm
INIT_LOG_SPREAD = 0.05
EVAL_CHUNK = 16384


def cell_stride(m: int) -> int:
    return PARAMS_PER_SITE * m + 2


@dataclass
class Site:
    """One anisotropic cell site: center, shape factor and Huber threshold."""

    center: np.ndarray
    log_diag: np.ndarray
    off_diag: np.ndarray  # (L10, L20, L21)
    log_t: float

    @property
    def threshold(self) -> float:
        return float(np.exp(self.log_t))

    def matrix(self) -> np.ndarray:
        """Lower-triangular L with exp-reparameterized (strictly positive) diagonal."""
        L = np.zeros((3, 3))
        L[np.diag_indices(3)] = np.exp(self.log_diag)
        L[1, 0], L[2, 0], L[2, 1] = self.off_diag
        return L


@dataclass
class SkinCell:
    """All sites of one joint plus its sparsity relaxation and falloff."""

    sites: list[Site]
    log_c: float
    log_r: float

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c))

    @property
    def r(self) -> float:
        return float(np.exp(self.log_r))


@dataclass(eq=False)
class SkinCellSet:
    """Field parameters for all ``n`` joints, in skeleton joint order.

    ``l`` is the target number of bone influences; evaluation clamps it to
    ``n`` when the rig has fewer joints than requested influences.
    """

    centers: np.ndarray   # (n, m, 3)
    log_diag: np.ndarray  # (n, m, 3)
    off_diag: np.ndarray  # (n, m, 3)
    log_t: np.ndarray     # (n, m)
    log_c: np.ndarray     # (n,)
    log_r: np.ndarray     # (n,)
    l: int = 4
    joint_names: list[str] | None = None

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        self.log_diag = np.ascontiguousarray(self.log_diag, dtype=np.float64)
        self.off_diag = np.ascontiguousarray(self.off_diag, dtype=np.float64)
        self.log_t = np.ascontiguousarray(self.log_t, dtype=np.float64)
        self.log_c = np.ascontiguousarray(self.log_c, dtype=np.float64)
        self.log_r = np.ascontiguousarray(self.log_r, dtype=np.float64)
        n, m = self.centers.shape[:2]
        if n < 1 or m < 1:
            raise SkinCellsError("need at least one cell with one site")
        if self.centers.shape != (n, m, 3) or self.log_diag.shape != (n, m, 3):
            raise SkinCellsError("inconsistent site array shapes")
        if self.off_diag.shape != (n, m, 3) or self.log_t.shape != (n, m):
            raise SkinCellsError("inconsistent site array shapes")
        if self.log_c.shape != (n,) or self.log_r.shape != (n,):
            raise SkinCellsError("inconsistent cell array shapes")
        if self.l < 1:
            raise SkinCellsError("l must be >= 1")
        if self.joint_names is not None and len(self.joint_names) != n:
            raise SkinCellsError("joint name count does not match cell count")

    @property
    def n_joints(self) -> int:
        return self.centers.shape[0]

    @property
    def n_sites(self) -> int:
        return self.centers.shape[1]

    def site(self, j: int, k: int) -> Site:
        return Site(
            center=self.centers[j, k].copy(),
            log_diag=self.log_diag[j, k].copy(),
            off_diag=self.off_diag[j, k].copy(),
            log_t=float(self.log_t[j, k]),
        )

    def cell(self, j: int) -> SkinCell:
        return SkinCell(
            sites=[self.site(j, k) for k in range(self.n_sites)],
            log_c=float(self.log_c[j]),
            log_r=float(self.log_r[j]),
        )

    @classmethod
    def from_cells(cls, cells: list[SkinCell], l: int, joint_names=None) -> "SkinCellSet":
        n = len(cells)
        m = len(cells[0].sites)
        out = cls(
            centers=np.array([[s.center for s in c.sites] for c in cells]),
            log_diag=np.array([[s.log_diag for s in c.sites] for c in cells]),
            off_diag=np.array([[s.off_diag for s in c.sites] for c in cells]),
            log_t=np.array([[s.log_t for s in c.sites] for c in cells]),
            log_c=np.array([c.log_c for c in cells]),
            log_r=np.array([c.log_r for c in cells]),
            l=l,
            joint_names=joint_names,
        )
        if out.n_sites != m:
            raise SkinCellsError("cells disagree on site count")
        return out

    def pack(self) -> np.ndarray:
        """Flatten to the packed parameter vector (kernel/file layout)."""
        n, m = self.n_joints, self.n_sites
        p = np.empty((n, cell_stride(m)))
        site = p[:, : PARAMS_PER_SITE * m].reshape(n, m, PARAMS_PER_SITE)
        site[..., 0:3] = self.centers
        site[..., 3:6] = self.log_diag
        site[..., 6:9] = self.off_diag
        site[..., 9] = self.log_t
        p[:, PARAMS_PER_SITE * m] = self.log_c
        p[:, PARAMS_PER_SITE * m + 1] = self.log_r
        return p.ravel()

    @classmethod
    def unpack(cls, flat: np.ndarray, n: int, m: int, l: int, joint_names=None) -> "SkinCellSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n * cell_stride(m),):
            raise SkinCellsError(
                f"expected {n * cell_stride(m)} parameters for n={n}, m={m}, got {flat.size}"
            )
        p = flat.reshape(n, cell_stride(m))
        site = p[:, : PARAMS_PER_SITE * m].reshape(n, m, PARAMS_PER_SITE)
        return cls(
            centers=site[..., 0:3].copy(),
            log_diag=site[..., 3:6].copy(),
            off_diag=site[..., 6:9].copy(),
            log_t=site[..., 9].copy(),
            log_c=p[:, PARAMS_PER_SITE * m].copy(),
            log_r=p[:, PARAMS_PER_SITE * m + 1].copy(),
            l=l,
            joint_names=list(joint_names) if joint_names is not None else None,
        )


def mahalanobis_distance(x, site: Site) -> float:
    """sqrt((x - p)^T L^T L (x - p)); zero only at the site center."""
    delta = np.asarray(x, dtype=np.float64) - site.center
    y = site.matrix() @ delta
    return float(np.sqrt(y @ y))


def huber_offset(d: float, t: float) -> float:
    """Quadratic below t, linear above; C1 at the branch point, >= t/2 everywhere."""
    if d < t:
        return 0.5 * (d * d / t + t)
    return float(d)


def cell_distance(x, cell: SkinCell) -> float:
    """Minimum Huber-modulated site distance; strictly positive."""
    return min(
        huber_offset(mahalanobis_distance(x, s), s.threshold) for s in cell.sites
    )


def weight_field_eval(cells: SkinCellSet, x, clamp_sparsity: bool = False) -> np.ndarray:
    """Normalized weights at one point (n,) or a batch (V, n).

    Rows always sum to 1; when the unnormalized sum underflows (for example
    l=1 with clamped sparsity, where every numerator vanishes) the result is
    a one-hot at the nearest cell. ``clamp_sparsity`` forces every c_j to 0,
    which guarantees at most ``l`` nonzeros per row.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    params = cells.pack()
    n, m = cells.n_joints, cells.n_sites
    out = np.empty((len(pts), n))
    for lo in range(0, len(pts), EVAL_CHUNK):
        chunk = pts[lo : lo + EVAL_CHUNK]
        out[lo : lo + len(chunk)] = kernels.field_forward(
            params, n, m, chunk, cells.l, clamp_sparsity
        )[0]
    return out[0] if single else out


def top_l(w: np.ndarray, l: int) -> np.ndarray:
    """Keep the ``l`` largest entries per row (ties keep the lower index),
    zero the rest. Does not renormalize."""
    if l < 1:
        raise SkinCellsError("l must be >= 1")
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    rows = np.atleast_2d(w)
    if l >= rows.shape[1]:
        out = rows.copy()
    else:
        order = np.argsort(-rows, axis=1, kind="stable")
        out = np.zeros_like(rows)
        rcols = order[:, :l]
        ridx = np.arange(len(rows))[:, None]
        out[ridx, rcols] = rows[ridx, rcols]
    return out[0] if single else out


def renormalized_top_l(w: np.ndarray, l: int) -> np.ndarray:
    """top_l followed by renormalization, skipping rows where nothing nonzero
    was dropped so already-sparse rows pass through bit-exact."""
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    rows = np.atleast_2d(w)
    kept = top_l(rows, l)
    dropped = ((rows != 0.0) & (kept == 0.0)).any(axis=1)
    out = kept.copy()
    if dropped.any():
        sums = kept[dropped].sum(axis=1, keepdims=True)
        if (sums <= 0.0).any():
            raise SkinCellsError("cannot renormalize all-zero weight row")
        out[dropped] = kept[dropped] / sums
    return out[0] if single else out


def proximity_weights(x, skeleton: Skeleton, l: int, falloff: float) -> np.ndarray:
    """Classic proximity baseline: 1/d**falloff on the l nearest joints.

    Per-joint distance is the distance to the joint's outgoing bone segments
    (its rest position for leaves), floored at 1e-6 cm.
    """
    if falloff <= 0.0:
        raise SkinCellsError("falloff must be positive")
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    d = np.maximum(joint_distances(skeleton, pts), 1e-6)
    scores = d ** (-float(falloff))
    kept = top_l(scores, l)
    w = kept / kept.sum(axis=1, keepdims=True)
    return w[0] if single else w


def softmax_field_eval(sites, x, beta: float, precision: str = "double") -> np.ndarray:
    """Naive softmax baseline over plain site distances.

    Computed without max-subtraction in the requested precision; non-finite
    outputs (exp underflow at distant points) are returned as-is, they are the
    behavior under study.
    """
    if precision not in ("single", "double"):
        raise SkinCellsError("precision must be 'single' or 'double'")
    dtype = np.float32 if precision == "single" else np.float64
    sites = np.asarray(sites, dtype=np.float64).reshape(-1, 3)
    if len(sites) == 0:
        raise SkinCellsError("softmax field needs at least one site")
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    d = np.linalg.norm(pts[:, None, :] - sites[None, :, :], axis=2).astype(dtype)
    with np.errstate(invalid="ignore", divide="ignore", under="ignore"):
        e = np.exp(dtype(-beta) * d)
        w = e / e.sum(axis=1, keepdims=True, dtype=dtype)
    return w[0] if single else w


def _sample_in_hull(points: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    # Convex combination with flat Dirichlet coefficients: always inside the
    # hull, uniform for up to 4 affinely independent corners.
    coeffs = rng.dirichlet(np.ones(len(points)), size=count)
    return coeffs @ points


def _sample_in_ball(center, radius, count, rng):
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return center + direction * radius * rng.uniform(size=(count, 1)) ** (1.0 / 3.0)


def initialize_cells(
    skeleton: Skeleton,
    mesh=None,
    m: int = 6,
    l: int = 4,
    rng: np.random.Generator | None = None,
) -> SkinCellSet:
    """Seed one cell per joint along the rig.

    Joints with one child place ``m`` evenly spaced sites on the bone, joints
    with several children sample the convex hull of the child positions, and
    leaves sample a 0.05 cm ball around the joint. log t/c/r start at
    Uniform(-0.05, 0.05) in log space; L starts at identity with the same
    spread on its lower triangle (diagonal in log space). ``mesh`` is accepted
    for interface symmetry with the rest of the pipeline and currently unused.
    """
    del mesh
    if m < 1:
        raise SkinCellsError("m must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    n = skeleton.n_joints
    centers = np.empty((n, m, 3))
    for j in range(n):
        kids = skeleton.children(j)
        pos = skeleton.rest_positions
        if kids.size == 1:
            ts = np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.5])
            centers[j] = pos[j] + ts[:, None] * (pos[kids[0]] - pos[j])
        elif kids.size > 1:
            centers[j] = _sample_in_hull(pos[kids], m, rng)
        else:
            centers[j] = _sample_in_ball(pos[j], LEAF_SITE_RADIUS, m, rng)
    spread = INIT_LOG_SPREAD
    return SkinCellSet(
        centers=centers,
        log_diag=rng.uniform(-spread, spread, size=(n, m, 3)),
        off_diag=rng.uniform(-spread, spread, size=(n, m, 3)),
        log_t=rng.uniform(-spread, spread, size=(n, m)),
        log_c=rng.uniform(-spread, spread, size=n),
        log_r=rng.uniform(-spread, spread, size=n),
        l=l,
        joint_names=list(skeleton.names),
    )
