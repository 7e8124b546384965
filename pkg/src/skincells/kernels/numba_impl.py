"""Numba-compiled twins of the numpy kernels.

Same contracts and branch rules as :mod:`skincells.kernels.numpy_impl`,
written as explicit loops. Kept single-threaded so reductions stay
deterministic.
"""

import math

import numpy as np
from numba import njit

SUM_FLOOR = 1e-12


@njit(cache=True)
def field_forward(params, n, m, points, l, clamp_c):
    stride = 10 * m + 2
    npoints = points.shape[0]
    w = np.zeros((npoints, n))
    d = np.empty((npoints, n))
    kstar = np.empty((npoints, n), dtype=np.int64)
    jl = np.empty(npoints, dtype=np.int64)
    ssum = np.empty(npoints)
    lc = l if l < n else n

    for v in range(npoints):
        x0 = points[v, 0]
        x1 = points[v, 1]
        x2 = points[v, 2]
        for j in range(n):
            base = j * stride
            best = np.inf
            bestk = 0
            for k in range(m):
                o = base + 10 * k
                d0 = x0 - params[o]
                d1 = x1 - params[o + 1]
                d2 = x2 - params[o + 2]
                l00 = math.exp(params[o + 3])
                l11 = math.exp(params[o + 4])
                l22 = math.exp(params[o + 5])
                thr = math.exp(params[o + 9])
                y0 = l00 * d0
                y1 = params[o + 6] * d0 + l11 * d1
                y2 = params[o + 7] * d0 + params[o + 8] * d1 + l22 * d2
                q = y0 * y0 + y1 * y1 + y2 * y2
                if q < thr * thr:
                    hq = 0.5 * (q / thr + thr)
                else:
                    hq = math.sqrt(q)
                if hq < best:
                    best = hq
                    bestk = k
            d[v, j] = best
            kstar[v, j] = bestk

        order = np.argsort(d[v], kind="mergesort")
        jlv = order[lc - 1]
        jl[v] = jlv
        dl = d[v, jlv]

        s = 0.0
        for j in range(n):
            base = j * stride
            c = 0.0 if clamp_c else math.exp(params[base + 10 * m])
            r = math.exp(params[base + 10 * m + 1])
            gap = dl - d[v, j]
            numer = c if c >= gap else gap
            uj = (numer / d[v, j]) ** r
            w[v, j] = uj
            s += uj
        ssum[v] = s
        if s >= SUM_FLOOR:
            for j in range(n):
                w[v, j] /= s
        else:
            jmin = 0
            dmin = d[v, 0]
            for j in range(1, n):
                if d[v, j] < dmin:
                    dmin = d[v, j]
                    jmin = j
            for j in range(n):
                w[v, j] = 0.0
            w[v, jmin] = 1.0
    return w, d, kstar, jl, ssum


@njit(cache=True)
def field_backward(params, n, m, points, l, clamp_c, w, d, kstar, jl, ssum, grad_w):
    stride = 10 * m + 2
    npoints = points.shape[0]
    grad = np.zeros_like(params)
    dgrad = np.empty(n)

    for v in range(npoints):
        if ssum[v] < SUM_FLOOR:
            continue
        s = ssum[v]
        dot = 0.0
        for j in range(n):
            dot += grad_w[v, j] * w[v, j]
        jlv = jl[v]
        dl = d[v, jlv]

        ddl = 0.0
        for j in range(n):
            base = j * stride
            c = 0.0 if clamp_c else math.exp(params[base + 10 * m])
            r = math.exp(params[base + 10 * m + 1])
            gap = dl - d[v, j]
            use_c = c >= gap
            numer = c if use_c else gap
            dj = d[v, j]
            ratio = numer / dj
            gu = (grad_w[v, j] - dot) / s
            if ratio > 0.0:
                dratio = gu * r * ratio ** (r - 1.0)
                grad[base + 10 * m + 1] += gu * (w[v, j] * s) * math.log(ratio) * r
            else:
                dratio = 0.0
            dnumer = dratio / dj
            ddj = -dratio * numer / (dj * dj)
            if use_c:
                if not clamp_c:
                    grad[base + 10 * m] += dnumer * c
            else:
                ddl += dnumer
                ddj -= dnumer
            dgrad[j] = ddj

        dgrad[jlv] += ddl

        x0 = points[v, 0]
        x1 = points[v, 1]
        x2 = points[v, 2]
        for j in range(n):
            dd = dgrad[j]
            o = j * stride + 10 * kstar[v, j]
            d0 = x0 - params[o]
            d1 = x1 - params[o + 1]
            d2 = x2 - params[o + 2]
            l00 = math.exp(params[o + 3])
            l11 = math.exp(params[o + 4])
            l22 = math.exp(params[o + 5])
            l10 = params[o + 6]
            l20 = params[o + 7]
            l21 = params[o + 8]
            thr = math.exp(params[o + 9])
            y0 = l00 * d0
            y1 = l10 * d0 + l11 * d1
            y2 = l20 * d0 + l21 * d1 + l22 * d2
            q = y0 * y0 + y1 * y1 + y2 * y2
            if q < thr * thr:
                dq = dd / (2.0 * thr)
                grad[o + 9] += dd * 0.5 * (1.0 - q / (thr * thr)) * thr
            else:
                sq = math.sqrt(q)
                dq = dd / (2.0 * sq) if sq > 0.0 else 0.0
            dy0 = 2.0 * dq * y0
            dy1 = 2.0 * dq * y1
            dy2 = 2.0 * dq * y2
            grad[o + 0] -= l00 * dy0 + l10 * dy1 + l20 * dy2
            grad[o + 1] -= l11 * dy1 + l21 * dy2
            grad[o + 2] -= l22 * dy2
            grad[o + 3] += dy0 * d0 * l00
            grad[o + 4] += dy1 * d1 * l11
            grad[o + 5] += dy2 * d2 * l22
            grad[o + 6] += dy1 * d0
            grad[o + 7] += dy2 * d0
            grad[o + 8] += dy2 * d1
    return grad


@njit(cache=True)
def laplacian_apply(offsets, flat, inv_deg, x):
    nv = x.shape[0]
    out = np.empty_like(x)
    for v in range(nv):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for i in range(offsets[v], offsets[v + 1]):
            u = flat[i]
            s0 += x[u, 0]
            s1 += x[u, 1]
            s2 += x[u, 2]
        out[v, 0] = s0 * inv_deg[v] - x[v, 0]
        out[v, 1] = s1 * inv_deg[v] - x[v, 1]
        out[v, 2] = s2 * inv_deg[v] - x[v, 2]
    return out


@njit(cache=True)
def laplacian_adjoint(offsets, flat, inv_deg, vrep, y):
    nv = y.shape[0]
    out = -y.copy()
    for v in range(nv):
        c0 = y[v, 0] * inv_deg[v]
        c1 = y[v, 1] * inv_deg[v]
        c2 = y[v, 2] * inv_deg[v]
        for i in range(offsets[v], offsets[v + 1]):
            u = flat[i]
            out[u, 0] += c0
            out[u, 1] += c1
            out[u, 2] += c2
    return out


@njit(cache=True)
def segment_hits(verts, tris, seg_a, seg_b, excl_offsets, excl_flat, eps):
    ntri = tris.shape[0]
    nseg = seg_a.shape[0]
    hits = np.zeros(nseg, dtype=np.bool_)
    for s in range(nseg):
        ax = seg_a[s, 0]
        ay = seg_a[s, 1]
        az = seg_a[s, 2]
        dx = seg_b[s, 0] - ax
        dy = seg_b[s, 1] - ay
        dz = seg_b[s, 2] - az
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        if length <= 2.0 * eps:
            continue
        shrink = eps / length
        ax += dx * shrink
        ay += dy * shrink
        az += dz * shrink
        scale = 1.0 - 2.0 * shrink
        dx *= scale
        dy *= scale
        dz *= scale
        e0 = excl_offsets[s]
        e1 = excl_offsets[s + 1]
        for ti in range(ntri):
            skip = False
            for e in range(e0, e1):
                if excl_flat[e] == ti:
                    skip = True
                    break
            if skip:
                continue
            p0x = verts[tris[ti, 0], 0]
            p0y = verts[tris[ti, 0], 1]
            p0z = verts[tris[ti, 0], 2]
            e1x = verts[tris[ti, 1], 0] - p0x
            e1y = verts[tris[ti, 1], 1] - p0y
            e1z = verts[tris[ti, 1], 2] - p0z
            e2x = verts[tris[ti, 2], 0] - p0x
            e2y = verts[tris[ti, 2], 1] - p0y
            e2z = verts[tris[ti, 2], 2] - p0z
            hx = dy * e2z - dz * e2y
            hy = dz * e2x - dx * e2z
            hz = dx * e2y - dy * e2x
            det = e1x * hx + e1y * hy + e1z * hz
            if abs(det) <= 1e-14:
                continue
            f = 1.0 / det
            sx = ax - p0x
            sy = ay - p0y
            sz = az - p0z
            uu = f * (sx * hx + sy * hy + sz * hz)
            if uu < 0.0 or uu > 1.0:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            vv = f * (dx * qx + dy * qy + dz * qz)
            if vv < 0.0 or uu + vv > 1.0:
                continue
            tt = f * (e2x * qx + e2y * qy + e2z * qz)
            if 0.0 <= tt <= 1.0:
                hits[s] = True
                break
    return hits
