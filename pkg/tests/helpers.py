"""Shared test utilities: finite-difference gradient checks and slow oracles.

The FD comparison is per-tensor: max |analytic - central_diff| over probed
elements, normalized by the largest central-difference magnitude of that
tensor. Scalarization of multi-output ops uses a fixed random projection so
loss values stay O(1) while gradients keep a healthy scale for float32 FD.
"""

from __future__ import annotations

import numpy as np

from arborseg import tensor as T
from arborseg.tensor import Tensor


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    return float(np.abs(analytic - fd).max() / (np.abs(fd).max() + 1e-6))


def fd_check(build, arrays, h=1e-3, tol=1e-3, max_probes=160, rng=None):
    """Check gradients of scalar build(tensors) against central differences.

    build: callable taking a list of Tensors, returning a scalar Tensor.
    arrays: list of float32 numpy arrays (leaf values, perturbed in place).
    Returns the worst per-tensor relative error (asserts it is < tol).
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.asarray(a, np.float32) for a in arrays]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(leaves)
    loss.backward()
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]

    def feval():
        with T.no_grad():
            return build([Tensor(a) for a in arrays]).item()

    worst = 0.0
    for a, g_an in zip(arrays, analytic):
        flat = a.ravel()
        n = flat.size
        idxs = np.arange(n) if n <= max_probes else rng.choice(n, max_probes, replace=False)
        fd_vals = np.zeros(len(idxs), np.float64)
        an_vals = g_an.ravel()[idxs].astype(np.float64)
        for j, i in enumerate(idxs):
            orig = flat[i]
            flat[i] = orig + np.float32(h)
            fp = feval()
            flat[i] = orig - np.float32(h)
            fm = feval()
            flat[i] = orig
            fd_vals[j] = (fp - fm) / (2.0 * h)
        err = rel_err(an_vals, fd_vals)
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch: rel err {err:.2e} >= {tol}"
    return worst


def random_projection_loss(out: Tensor, proj: np.ndarray) -> Tensor:
    return T.tsum(out * Tensor(proj))


def spread_values(rng: np.random.Generator, shape, lo=0.05, hi=0.95) -> np.ndarray:
    """Random-looking values with pairwise gaps > 4e-3 (safe for FD through
    min/max pooling argmin selection with h=1e-3)."""
    n = int(np.prod(shape))
    vals = np.linspace(lo, hi, n, dtype=np.float32)
    return rng.permutation(vals).reshape(shape)


def conv3d_loops(x, w, b, stride=(1, 1, 1), padding=(0, 0, 0)):
    """Six-nested-loop 3D correlation reference (independent oracle)."""
    co, ci, kd, kh, kw = w.shape
    sz, sy, sx = stride
    pz, py, px = padding
    xp = np.pad(x.astype(np.float64), ((0, 0), (pz, pz), (py, py), (px, px)))
    zo = (xp.shape[1] - kd) // sz + 1
    yo = (xp.shape[2] - kh) // sy + 1
    xo = (xp.shape[3] - kw) // sx + 1
    out = np.zeros((co, zo, yo, xo))
    for c in range(co):
        for z in range(zo):
            for y in range(yo):
                for xx in range(xo):
                    acc = 0.0
                    for i in range(ci):
                        for dz in range(kd):
                            for dy in range(kh):
                                for dx in range(kw):
                                    acc += (w[c, i, dz, dy, dx]
                                            * xp[i, z * sz + dz, y * sy + dy, xx * sx + dx])
                    out[c, z, y, xx] = acc + (b[c] if b is not None else 0.0)
    return out


def matmul_loops(a, b):
    """Triple-loop matrix product reference."""
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out
