"""Pure-numpy implementations of the hot kernels.

These are the reference semantics; ``numba_impl`` mirrors them loop-for-loop.
Cell parameters arrive as one flat float64 vector in the packed layout
documented in :mod:`skincells.field`: per joint, ``m`` sites of 10 scalars
(center xyz, log diagonal of L, lower off-diagonal of L, log threshold)
followed by the cell's log sparsity relaxation and log falloff.
"""

import numpy as np

SUM_FLOOR = 1e-12


def _unpack(params, n, m):
    stride = 10 * m + 2
    p = params.reshape(n, stride)
    site = p[:, : 10 * m].reshape(n, m, 10)
    centers = site[..., 0:3]
    diag = np.exp(site[..., 3:6])
    off = site[..., 6:9]
    thr = np.exp(site[..., 9])
    log_c = p[:, 10 * m]
    log_r = p[:, 10 * m + 1]
    return centers, diag, off, thr, log_c, log_r


def _site_distances(points, centers, diag, off, thr):
    """Huber-modulated anisotropic distance to every site, shape (V, n, m)."""
    delta = points[:, None, None, :] - centers[None, :, :, :]
    y0 = diag[..., 0] * delta[..., 0]
    y1 = off[..., 0] * delta[..., 0] + diag[..., 1] * delta[..., 1]
    y2 = (
        off[..., 1] * delta[..., 0]
        + off[..., 2] * delta[..., 1]
        + diag[..., 2] * delta[..., 2]
    )
    q = y0 * y0 + y1 * y1 + y2 * y2
    # q < t^2 is the quadratic Huber branch; in squared form it stays smooth at q=0
    return np.where(q < thr * thr, 0.5 * (q / thr + thr), np.sqrt(q))


def field_forward(params, n, m, points, l, clamp_c):
    """Evaluate normalized cell weights at ``points``.

    Returns ``(w, d, kstar, jl, ssum)`` where ``d`` is the per-cell distance,
    ``kstar`` the winning site index per cell, ``jl`` the cell holding the
    l-th smallest distance and ``ssum`` the unnormalized weight sum (rows with
    ``ssum < SUM_FLOOR`` fall back to a one-hot at the nearest cell).
    """
    centers, diag, off, thr, log_c, log_r = _unpack(params, n, m)
    npoints = points.shape[0]
    hq = _site_distances(points, centers, diag, off, thr)
    kstar = np.argmin(hq, axis=2)
    d = np.take_along_axis(hq, kstar[:, :, None], axis=2)[..., 0]

    lc = min(l, n)
    order = np.argsort(d, axis=1, kind="stable")
    jl = order[:, lc - 1]
    dl = d[np.arange(npoints), jl]

    c = np.zeros(n) if clamp_c else np.exp(log_c)
    r = np.exp(log_r)
    gap = dl[:, None] - d
    use_c = c[None, :] >= gap
    numer = np.where(use_c, c[None, :], gap)
    u = (numer / d) ** r[None, :]
    ssum = u.sum(axis=1)

    w = np.zeros_like(u)
    ok = ssum >= SUM_FLOOR
    w[ok] = u[ok] / ssum[ok, None]
    bad = np.nonzero(~ok)[0]
    if bad.size:
        w[bad, np.argmin(d[bad], axis=1)] = 1.0
    return w, d, kstar.astype(np.int64), jl.astype(np.int64), ssum


def field_backward(params, n, m, points, l, clamp_c, w, d, kstar, jl, ssum, grad_w):
    """Accumulate d(loss)/d(params) given d(loss)/dw.

    Branch choices (winning site, l-th cell, max/min selections) are replayed
    from the forward pass so value and gradient always agree. Fallback rows
    (one-hot) are locally constant and contribute nothing.
    """
    centers, diag, off, thr, log_c, log_r = _unpack(params, n, m)
    npoints = points.shape[0]
    stride = 10 * m + 2
    grad = np.zeros_like(params)

    c = np.zeros(n) if clamp_c else np.exp(log_c)
    r = np.exp(log_r)

    ok = ssum >= SUM_FLOOR
    safe_sum = np.where(ok, ssum, 1.0)
    gw = np.where(ok[:, None], grad_w, 0.0)
    u = w * safe_sum[:, None]
    gu = (gw - (gw * w).sum(axis=1, keepdims=True)) / safe_sum[:, None]

    rows = np.arange(npoints)
    dl = d[rows, jl]
    gap = dl[:, None] - d
    use_c = c[None, :] >= gap
    numer = np.where(use_c, c[None, :], gap)
    ratio = numer / d
    pos = ratio > 0.0
    safe_ratio = np.where(pos, ratio, 1.0)

    dratio = np.where(pos, gu * r[None, :] * safe_ratio ** (r[None, :] - 1.0), 0.0)
    glog_r = (np.where(pos, gu * u * np.log(safe_ratio), 0.0) * r[None, :]).sum(axis=0)
    dnumer = dratio / d
    dd = -dratio * numer / (d * d)
    from_gap = np.where(use_c, 0.0, dnumer)
    dd -= from_gap
    dd[rows, jl] += from_gap.sum(axis=1)
    if not clamp_c:
        glog_c = np.where(use_c, dnumer, 0.0).sum(axis=0) * c

    # chain dd through the winning site of each cell
    j_idx = np.broadcast_to(np.arange(n)[None, :], kstar.shape)
    cen_w = centers[j_idx, kstar]
    diag_w = diag[j_idx, kstar]
    off_w = off[j_idx, kstar]
    t_w = thr[j_idx, kstar]
    delta = points[:, None, :] - cen_w
    y0 = diag_w[..., 0] * delta[..., 0]
    y1 = off_w[..., 0] * delta[..., 0] + diag_w[..., 1] * delta[..., 1]
    y2 = (
        off_w[..., 1] * delta[..., 0]
        + off_w[..., 2] * delta[..., 1]
        + diag_w[..., 2] * delta[..., 2]
    )
    q = y0 * y0 + y1 * y1 + y2 * y2
    quad = q < t_w * t_w
    sq = np.sqrt(q)
    dq = np.where(quad, dd / (2.0 * t_w), dd / np.where(sq > 0.0, 2.0 * sq, 1.0))
    glog_t = np.where(quad, dd * 0.5 * (1.0 - q / (t_w * t_w)), 0.0) * t_w
    dy0 = 2.0 * dq * y0
    dy1 = 2.0 * dq * y1
    dy2 = 2.0 * dq * y2
    gd0 = diag_w[..., 0] * dy0 + off_w[..., 0] * dy1 + off_w[..., 1] * dy2
    gd1 = diag_w[..., 1] * dy1 + off_w[..., 2] * dy2
    gd2 = diag_w[..., 2] * dy2

    base = j_idx * stride + kstar * 10
    np.add.at(grad, base + 0, -gd0)
    np.add.at(grad, base + 1, -gd1)
    np.add.at(grad, base + 2, -gd2)
    np.add.at(grad, base + 3, dy0 * delta[..., 0] * diag_w[..., 0])
    np.add.at(grad, base + 4, dy1 * delta[..., 1] * diag_w[..., 1])
    np.add.at(grad, base + 5, dy2 * delta[..., 2] * diag_w[..., 2])
    np.add.at(grad, base + 6, dy1 * delta[..., 0])
    np.add.at(grad, base + 7, dy2 * delta[..., 0])
    np.add.at(grad, base + 8, dy2 * delta[..., 1])
    np.add.at(grad, base + 9, glog_t)

    cell_base = np.arange(n) * stride + 10 * m
    if not clamp_c:
        grad[cell_base] += glog_c
    grad[cell_base + 1] += glog_r
    return grad


def laplacian_apply(offsets, flat, inv_deg, x):
    sums = np.add.reduceat(x[flat], offsets[:-1], axis=0)
    return sums * inv_deg[:, None] - x


def laplacian_adjoint(offsets, flat, inv_deg, vrep, y):
    out = -y.astype(np.float64, copy=True)
    np.add.at(out, flat, (y * inv_deg[:, None])[vrep])
    return out


def segment_hits(verts, tris, seg_a, seg_b, excl_offsets, excl_flat, eps):
    """Per-segment mesh intersection test (Moller-Trumbore over all triangles).

    Segments are shrunk by ``eps`` at both ends; triangles listed in the
    per-segment exclusion ranges are skipped.
    """
    v0 = verts[tris[:, 0]]
    e1 = verts[tris[:, 1]] - v0
    e2 = verts[tris[:, 2]] - v0
    ntri = tris.shape[0]
    nseg = seg_a.shape[0]
    hits = np.zeros(nseg, dtype=np.bool_)
    for s in range(nseg):
        a = seg_a[s]
        b = seg_b[s]
        dvec = b - a
        length = np.sqrt((dvec * dvec).sum())
        if length <= 2.0 * eps:
            continue
        a2 = a + dvec * (eps / length)
        d2 = dvec * (1.0 - 2.0 * eps / length)
        allowed = np.ones(ntri, dtype=np.bool_)
        allowed[excl_flat[excl_offsets[s] : excl_offsets[s + 1]]] = False

        h = np.cross(np.broadcast_to(d2, e2.shape), e2)
        det = (e1 * h).sum(axis=1)
        cand = allowed & (np.abs(det) > 1e-14)
        if not cand.any():
            continue
        f = 1.0 / det[cand]
        svec = a2 - v0[cand]
        uu = f * (svec * h[cand]).sum(axis=1)
        qvec = np.cross(svec, e1[cand])
        vv = f * (qvec * d2).sum(axis=1)
        tt = f * (e2[cand] * qvec).sum(axis=1)
        inside = (
            (uu >= 0.0)
            & (uu <= 1.0)
            & (vv >= 0.0)
            & (uu + vv <= 1.0)
            & (tt >= 0.0)
            & (tt <= 1.0)
        )
        hits[s] = bool(inside.any())
    return hits
