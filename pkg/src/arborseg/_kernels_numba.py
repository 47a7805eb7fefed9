"""Numba @njit twins of the kernels in _kernels_numpy.py.

Loop nests accumulate each output element in a fixed serial order, so results
are deterministic run to run even with prange. Rows along the contiguous x
axis are hoisted and the common stride-1 case is specialized so the inner
loops vectorize.
"""

from __future__ import annotations

import numba
import numpy as np

_JIT = dict(cache=True, fastmath=True, nogil=True)


@numba.njit(parallel=True, **_JIT)
def gather3d(x, w, stride):
    co, ci, kd, kh, kw = w.shape
    sz, sy, sx = stride
    zo = (x.shape[1] - kd) // sz + 1
    yo = (x.shape[2] - kh) // sy + 1
    xo = (x.shape[3] - kw) // sx + 1
    out = np.zeros((co, zo, yo, xo), np.float32)
    for cz in numba.prange(co * zo):
        c = cz // zo
        z0 = cz % zo
        plane = np.zeros((yo, xo), np.float32)
        for i in range(ci):
            for dz in range(kd):
                zz = z0 * sz + dz
                for y0 in range(yo):
                    for dy in range(kh):
                        row = x[i, zz, y0 * sy + dy]
                        line = plane[y0]
                        for dx in range(kw):
                            wv = w[c, i, dz, dy, dx]
                            if sx == 1:
                                for x0 in range(xo):
                                    line[x0] += wv * row[x0 + dx]
                            else:
                                for x0 in range(xo):
                                    line[x0] += wv * row[x0 * sx + dx]
        out[c, z0] = plane
    return out


@numba.njit(parallel=True, **_JIT)
def scatter3d(y, w, stride, out_spatial):
    co, ci, kd, kh, kw = w.shape
    sz, sy, sx = stride
    zo, yo, xo = y.shape[1], y.shape[2], y.shape[3]
    out = np.zeros((ci, out_spatial[0], out_spatial[1], out_spatial[2]), np.float32)
    for i in numba.prange(ci):
        for c in range(co):
            for z0 in range(zo):
                for dz in range(kd):
                    zz = z0 * sz + dz
                    for y0 in range(yo):
                        grow = y[c, z0, y0]
                        for dy in range(kh):
                            orow = out[i, zz, y0 * sy + dy]
                            for dx in range(kw):
                                wv = w[c, i, dz, dy, dx]
                                if sx == 1:
                                    for x0 in range(xo):
                                        orow[x0 + dx] += wv * grow[x0]
                                else:
                                    for x0 in range(xo):
                                        orow[x0 * sx + dx] += wv * grow[x0]
    return out


@numba.njit(parallel=True, **_JIT)
def wgrad3d(x, y, kshape, stride):
    kd, kh, kw = kshape
    sz, sy, sx = stride
    co = y.shape[0]
    ci = x.shape[0]
    zo, yo, xo = y.shape[1], y.shape[2], y.shape[3]
    out = np.zeros((co, ci, kd, kh, kw), np.float32)
    for c in numba.prange(co):
        for i in range(ci):
            for dz in range(kd):
                for dy in range(kh):
                    accs = np.zeros(kw, np.float32)
                    for z0 in range(zo):
                        zz = z0 * sz + dz
                        for y0 in range(yo):
                            yrow = y[c, z0, y0]
                            xrow = x[i, zz, y0 * sy + dy]
                            for dx in range(kw):
                                s = np.float32(0.0)
                                if sx == 1:
                                    for x0 in range(xo):
                                        s += yrow[x0] * xrow[x0 + dx]
                                else:
                                    for x0 in range(xo):
                                        s += yrow[x0] * xrow[x0 * sx + dx]
                                accs[dx] += s
                    out[c, i, dz, dy, :] = accs
    return out


@numba.njit(parallel=True, **_JIT)
def _pool3(x, take_min):
    c, d, h, w = x.shape
    out = np.empty((c, d, h, w), np.float32)
    arg = np.empty((c, d, h, w), np.int64)
    for ch in numba.prange(c):
        for z in range(d):
            z0 = max(z - 1, 0)
            z1 = min(z + 2, d)
            for y in range(h):
                y0 = max(y - 1, 0)
                y1 = min(y + 2, h)
                for xx in range(w):
                    x0 = max(xx - 1, 0)
                    x1 = min(xx + 2, w)
                    best = x[ch, z0, y0, x0]
                    bz, by, bx = z0, y0, x0
                    for zz in range(z0, z1):
                        for yy in range(y0, y1):
                            for xv in range(x0, x1):
                                v = x[ch, zz, yy, xv]
                                if (take_min and v < best) or (not take_min and v > best):
                                    best = v
                                    bz, by, bx = zz, yy, xv
                    out[ch, z, y, xx] = best
                    arg[ch, z, y, xx] = ((ch * d + bz) * h + by) * w + bx
    return out, arg


def minpool3(x):
    return _pool3(x, True)


def maxpool3(x):
    return _pool3(x, False)


@numba.njit(parallel=True, **_JIT)
def _pool3_backward(g, arg, gx, d, h, w):
    c = g.shape[0]
    for ch in numba.prange(c):
        for z in range(d):
            for y in range(h):
                for xx in range(w):
                    gx[arg[ch, z, y, xx]] += g[ch, z, y, xx]
    return gx


def pool3_backward(g, arg, shape):
    gx = np.zeros(int(np.prod(np.asarray(shape))), np.float32)
    d, h, w = shape[1], shape[2], shape[3]
    return _pool3_backward(g, arg, gx, d, h, w).reshape(shape)
