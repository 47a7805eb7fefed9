"""Pure-numpy implementations of the hot 3D kernels.

Convolution-style ops are expressed as one accumulation per kernel offset over
strided array views, so the heavy lifting stays inside BLAS-backed tensordot
calls instead of python loops over voxels.

Shape conventions (shared with the numba twin in _kernels_numba.py):

  gather3d   x:(Ci,Z,Y,X) pre-padded, w:(Co,Ci,kd,kh,kw) -> (Co,Do,Ho,Wo)
  scatter3d  y:(Co,Do,Ho,Wo), w:(Co,Ci,kd,kh,kw)         -> (Ci,Z,Y,X)
  wgrad3d    x:(Ci,Z,Y,X), y:(Co,Do,Ho,Wo)               -> (Co,Ci,kd,kh,kw)

gather3d is correlation (conv forward on padded input), scatter3d its adjoint
(conv input-grad and transposed-conv forward), wgrad3d the weight gradient of
both. Pool kernels run a 3x3x3 window with implicit edge clipping and report
the flat argmin/argmax index for the backward scatter.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def gather3d(x: np.ndarray, w: np.ndarray, stride: tuple[int, int, int]) -> np.ndarray:
    co, ci, kd, kh, kw = w.shape
    sz, sy, sx = stride
    zo = (x.shape[1] - kd) // sz + 1
    yo = (x.shape[2] - kh) // sy + 1
    xo = (x.shape[3] - kw) // sx + 1
    out = np.zeros((co, zo, yo, xo), np.float32)
    for dz in range(kd):
        for dy in range(kh):
            for dx in range(kw):
                view = x[:, dz:dz + zo * sz:sz, dy:dy + yo * sy:sy, dx:dx + xo * sx:sx]
                out += np.tensordot(w[:, :, dz, dy, dx], view, axes=(1, 0))
    return out


def scatter3d(
    y: np.ndarray,
    w: np.ndarray,
    stride: tuple[int, int, int],
    out_spatial: tuple[int, int, int],
) -> np.ndarray:
    co, ci, kd, kh, kw = w.shape
    sz, sy, sx = stride
    zo, yo, xo = y.shape[1:]
    out = np.zeros((ci,) + tuple(out_spatial), np.float32)
    for dz in range(kd):
        for dy in range(kh):
            for dx in range(kw):
                contrib = np.tensordot(w[:, :, dz, dy, dx], y, axes=(0, 0))
                out[:, dz:dz + zo * sz:sz, dy:dy + yo * sy:sy, dx:dx + xo * sx:sx] += contrib
    return out


def wgrad3d(x: np.ndarray, y: np.ndarray, kshape: tuple[int, int, int],
            stride: tuple[int, int, int]) -> np.ndarray:
    kd, kh, kw = kshape
    sz, sy, sx = stride
    co = y.shape[0]
    ci = x.shape[0]
    zo, yo, xo = y.shape[1:]
    out = np.zeros((co, ci, kd, kh, kw), np.float32)
    for dz in range(kd):
        for dy in range(kh):
            for dx in range(kw):
                view = x[:, dz:dz + zo * sz:sz, dy:dy + yo * sy:sy, dx:dx + xo * sx:sx]
                out[:, :, dz, dy, dx] = np.tensordot(y, view, axes=((1, 2, 3), (1, 2, 3)))
    return out


def _pool3(x: np.ndarray, take_min: bool) -> tuple[np.ndarray, np.ndarray]:
    c, d, h, w = x.shape
    fill = np.float32(np.inf if take_min else -np.inf)
    pad = np.full((c, d + 2, h + 2, w + 2), fill, np.float32)
    pad[:, 1:-1, 1:-1, 1:-1] = x
    win = sliding_window_view(pad, (3, 3, 3), axis=(1, 2, 3)).reshape(c, d, h, w, 27)
    pick = win.argmin(-1) if take_min else win.argmax(-1)
    out = np.take_along_axis(win, pick[..., None], axis=-1)[..., 0]
    # window offset -> absolute voxel, then flat index into x for the backward
    dz, rem = np.divmod(pick, 9)
    dy, dx = np.divmod(rem, 3)
    zz = np.arange(d)[None, :, None, None] + dz - 1
    yy = np.arange(h)[None, None, :, None] + dy - 1
    xx = np.arange(w)[None, None, None, :] + dx - 1
    cc = np.arange(c)[:, None, None, None]
    arg = ((cc * d + zz) * h + yy) * w + xx
    return np.ascontiguousarray(out), arg.astype(np.int64)


def minpool3(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _pool3(x, take_min=True)


def maxpool3(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _pool3(x, take_min=False)


def pool3_backward(g: np.ndarray, arg: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    gx = np.zeros(int(np.prod(shape)), np.float32)
    np.add.at(gx, arg.ravel(), g.ravel())
    return gx.reshape(shape)
