"""Timing comparison of the numba and numpy kernel backends.

Runs the raw 3D kernels on training-sized arrays and a full soma-model
train step, printing a table of per-call times and the numba speedup.

    python3 benchmarks/bench_backends.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from arborseg import backend
from arborseg import tensor as T
from arborseg.config import ModelConfig
from arborseg.losses import soma_loss
from arborseg.model import SomaModel
from arborseg.optim import AdamW
from arborseg.tensor import Tensor


def _time(fn, repeats: int) -> float:
    fn()                                  # warmup (JIT compile / cache load)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def kernel_cases(rng: np.random.Generator) -> dict:
    # shapes match what the tiny model pushes through the decoder
    x = rng.standard_normal((16, 18, 66, 66)).astype(np.float32)
    w = rng.standard_normal((16, 16, 3, 3, 3)).astype(np.float32)
    y = rng.standard_normal((16, 16, 64, 64)).astype(np.float32)
    p = rng.standard_normal((16, 16, 64, 64)).astype(np.float32)
    stride = (1, 1, 1)
    return {
        "gather3d 16x16 3^3 on 16x64x64":
            lambda: backend.gather3d(x, w, stride),
        "scatter3d (input grad)":
            lambda: backend.scatter3d(y, w, stride, (18, 66, 66)),
        "wgrad3d (weight grad)":
            lambda: backend.wgrad3d(x, y, (3, 3, 3), stride),
        "maxpool3 16x16x64x64":
            lambda: backend.maxpool3(p),
        "minpool3 16x16x64x64":
            lambda: backend.minpool3(p),
        "pool3_backward":
            lambda: backend.pool3_backward(p, backend.maxpool3(p)[1], p.shape),
    }


def model_step_case(rng: np.random.Generator):
    model = SomaModel(ModelConfig.for_variant("tiny"), seed=0)
    model.train()
    opt = AdamW(model.named_parameters())
    image = Tensor(rng.uniform(0, 1, (1, 16, 64, 64)).astype(np.float32))
    target = Tensor((rng.uniform(size=(1, 16, 64, 64)) < 0.01).astype(np.float32))

    def step():
        opt.zero_grad()
        loss = soma_loss(model(image), target)
        loss.backward()
        opt.step(1e-4)

    return step


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions per case (after one warmup)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    cases["soma train step (tiny, 64x64x16)"] = model_step_case(rng)

    results: dict[str, dict[str, float]] = {name: {} for name in cases}
    for be in ("numpy", "numba"):
        if be == "numba" and not backend.HAS_NUMBA:
            print("numba not importable; skipping")
            continue
        backend.set_backend(be)
        for name, fn in cases.items():
            results[name][be] = _time(fn, args.repeats)

    width = max(len(n) for n in results)
    print(f"{'case':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, times in results.items():
        np_ms = times["numpy"] * 1e3
        if "numba" in times:
            nb_ms = times["numba"] * 1e3
            print(f"{name:<{width}}  {np_ms:>8.2f}ms  {nb_ms:>8.2f}ms  "
                  f"{np_ms / nb_ms:>7.2f}x")
        else:
            print(f"{name:<{width}}  {np_ms:>8.2f}ms  {'-':>10}  {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
