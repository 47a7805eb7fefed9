"""Finite-difference checks for every differentiable op.

Central differences with h=1e-3 on float32 data, compared per tensor as
max|analytic - fd| / (max|fd| + 1e-6) < 1e-3.  Losses are random projections
of the op output so the scalar stays O(1) regardless of tensor size.
"""

import numpy as np
import pytest

from arborseg import tensor as T
from arborseg.tensor import Tensor
from arborseg.modules import MultiHeadAttention, TransformerBlock

from helpers import fd_check, random_projection_loss, spread_values


def _proj(rng, shape):
    return rng.standard_normal(shape).astype(np.float32)


class TestElementwiseGrads:
    @pytest.mark.parametrize("seed", range(10))
    def test_add_mul_div(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((4, 5)).astype(np.float32)
        b = rng.standard_normal((4, 5)).astype(np.float32) + 3.0
        p = _proj(rng, (4, 5))

        fd_check(lambda ts: random_projection_loss(ts[0] * ts[1] + ts[0] / ts[1], p),
                 [a, b], rng=rng)

    @pytest.mark.parametrize("seed", range(10))
    def test_gelu(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = rng.standard_normal((6, 7)).astype(np.float32)
        p = _proj(rng, (6, 7))
        fd_check(lambda ts: random_projection_loss(T.gelu(ts[0]), p), [x], rng=rng)

    @pytest.mark.parametrize("seed", range(10))
    def test_sigmoid(self, seed):
        rng = np.random.default_rng(200 + seed)
        x = rng.standard_normal((5, 5)).astype(np.float32) * 2
        p = _proj(rng, (5, 5))
        fd_check(lambda ts: random_projection_loss(T.sigmoid(ts[0]), p), [x], rng=rng)

    def test_gelu_slope_at_zero(self):
        # derivative at the origin equals the normal CDF there: 0.5
        x = Tensor(np.zeros(1, np.float32), requires_grad=True)
        T.tsum(T.gelu(x)).backward()
        h = 1e-3
        with T.no_grad():
            fp = T.gelu(Tensor([h])).item()
            fm = T.gelu(Tensor([-h])).item()
        fd = (fp - fm) / (2 * h)
        assert abs(x.grad[0] - 0.5) < 1e-6
        assert abs(x.grad[0] - fd) < 1e-4

    def test_relu_spread(self):
        rng = np.random.default_rng(300)
        x = spread_values(rng, (6, 6), lo=-0.9, hi=0.9)
        p = _proj(rng, (6, 6))
        fd_check(lambda ts: random_projection_loss(T.relu(ts[0]), p), [x], rng=rng)

    def test_log_power_clamp(self):
        rng = np.random.default_rng(310)
        x = rng.uniform(0.3, 2.0, (4, 4)).astype(np.float32)
        p = _proj(rng, (4, 4))
        fd_check(lambda ts: random_projection_loss(T.log(ts[0]) + T.power(ts[0], 1.5), p),
                 [x], rng=rng)
        # clamp bounds chosen off the value grid so no probe sits on a kink
        xc = spread_values(rng, (5, 5), lo=-1.0, hi=1.0)
        pc = _proj(rng, (5, 5))
        fd_check(lambda ts: random_projection_loss(T.clamp(ts[0], -0.51, 0.53), pc),
                 [xc], rng=rng)


class TestMatmulGrads:
    @pytest.mark.parametrize("seed", range(10))
    def test_2d(self, seed):
        rng = np.random.default_rng(400 + seed)
        a = rng.standard_normal((4, 6)).astype(np.float32)
        b = rng.standard_normal((6, 3)).astype(np.float32)
        p = _proj(rng, (4, 3))
        fd_check(lambda ts: random_projection_loss(T.matmul(ts[0], ts[1]), p),
                 [a, b], rng=rng)

    def test_batched(self):
        rng = np.random.default_rng(410)
        a = rng.standard_normal((2, 3, 4)).astype(np.float32)
        b = rng.standard_normal((2, 4, 5)).astype(np.float32)
        p = _proj(rng, (2, 3, 5))
        fd_check(lambda ts: random_projection_loss(T.matmul(ts[0], ts[1]), p),
                 [a, b], rng=rng)

    def test_broadcast_rhs(self):
        rng = np.random.default_rng(420)
        a = rng.standard_normal((2, 3, 4)).astype(np.float32)
        b = rng.standard_normal((4, 5)).astype(np.float32)
        p = _proj(rng, (2, 3, 5))
        fd_check(lambda ts: random_projection_loss(T.matmul(ts[0], ts[1]), p),
                 [a, b], rng=rng)


class TestConvGrads:
    @pytest.mark.parametrize("seed", range(10))
    def test_conv3d(self, seed):
        rng = np.random.default_rng(500 + seed)
        x = rng.standard_normal((2, 4, 5, 4)).astype(np.float32)
        w = (rng.standard_normal((3, 2, 3, 3, 3)) * 0.4).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        p = _proj(rng, (3, 4, 5, 4))
        fd_check(lambda ts: random_projection_loss(
            T.conv3d(ts[0], ts[1], ts[2], (1, 1, 1), (1, 1, 1)), p),
            [x, w, b], rng=rng, max_probes=60)

    def test_conv3d_strided(self):
        rng = np.random.default_rng(510)
        x = rng.standard_normal((2, 6, 7, 5)).astype(np.float32)
        w = (rng.standard_normal((2, 2, 2, 3, 2)) * 0.4).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        out_shape = T.conv3d(Tensor(x), Tensor(w), Tensor(b), (2, 2, 2), (1, 0, 1)).shape
        p = _proj(rng, out_shape)
        fd_check(lambda ts: random_projection_loss(
            T.conv3d(ts[0], ts[1], ts[2], (2, 2, 2), (1, 0, 1)), p),
            [x, w, b], rng=rng, max_probes=60)

    @pytest.mark.parametrize("seed", range(10))
    def test_conv_transpose3d(self, seed):
        rng = np.random.default_rng(600 + seed)
        x = rng.standard_normal((3, 3, 3, 3)).astype(np.float32)
        w = (rng.standard_normal((3, 2, 2, 2, 2)) * 0.4).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        out_shape = T.conv_transpose3d(Tensor(x), Tensor(w), Tensor(b), (2, 2, 2)).shape
        p = _proj(rng, out_shape)
        fd_check(lambda ts: random_projection_loss(
            T.conv_transpose3d(ts[0], ts[1], ts[2], (2, 2, 2)), p),
            [x, w, b], rng=rng, max_probes=60)


class TestNormalizationGrads:
    @pytest.mark.parametrize("seed", range(10))
    def test_softmax(self, seed):
        rng = np.random.default_rng(700 + seed)
        x = rng.standard_normal((4, 7)).astype(np.float32) * 2
        p = _proj(rng, (4, 7))
        fd_check(lambda ts: random_projection_loss(T.softmax(ts[0], axis=-1), p),
                 [x], rng=rng)

    @pytest.mark.parametrize("seed", range(10))
    def test_layer_norm(self, seed):
        rng = np.random.default_rng(800 + seed)
        x = rng.standard_normal((3, 9)).astype(np.float32)
        g = rng.standard_normal(9).astype(np.float32)
        b = rng.standard_normal(9).astype(np.float32)
        p = _proj(rng, (3, 9))
        fd_check(lambda ts: random_projection_loss(T.layer_norm(ts[0], ts[1], ts[2]), p),
                 [x, g, b], rng=rng)

    def test_batch_norm_train(self):
        rng = np.random.default_rng(900)
        x = rng.standard_normal((3, 4, 4, 3)).astype(np.float32)
        g = rng.standard_normal(3).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        p = _proj(rng, (3, 4, 4, 3))

        def build(ts):
            rm = np.zeros(3, np.float32)
            rv = np.ones(3, np.float32)
            return random_projection_loss(
                T.batch_norm3d(ts[0], ts[1], ts[2], rm, rv, training=True), p)

        fd_check(build, [x, g, b], rng=rng, max_probes=80)

    def test_batch_norm_eval(self):
        rng = np.random.default_rng(910)
        x = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
        g = rng.standard_normal(2).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        rm = rng.standard_normal(2).astype(np.float32)
        rv = rng.uniform(0.5, 2.0, 2).astype(np.float32)
        p = _proj(rng, (2, 3, 3, 3))
        fd_check(lambda ts: random_projection_loss(
            T.batch_norm3d(ts[0], ts[1], ts[2], rm.copy(), rv.copy(), training=False), p),
            [x, g, b], rng=rng)


class TestPoolingGrads:
    @pytest.mark.parametrize("seed", range(10))
    def test_maxpool(self, seed):
        rng = np.random.default_rng(1000 + seed)
        x = spread_values(rng, (2, 5, 5, 5))
        p = _proj(rng, (2, 5, 5, 5))
        fd_check(lambda ts: random_projection_loss(T.maxpool3(ts[0]), p),
                 [x], rng=rng, max_probes=60)

    @pytest.mark.parametrize("seed", range(10))
    def test_minpool(self, seed):
        rng = np.random.default_rng(1100 + seed)
        x = spread_values(rng, (2, 5, 5, 5))
        p = _proj(rng, (2, 5, 5, 5))
        fd_check(lambda ts: random_projection_loss(T.minpool3(ts[0]), p),
                 [x], rng=rng, max_probes=60)


class TestShapeOpGrads:
    def test_reshape_permute_concat_narrow(self):
        rng = np.random.default_rng(1200)
        a = rng.standard_normal((2, 3, 4)).astype(np.float32)
        b = rng.standard_normal((2, 3, 4)).astype(np.float32)
        p = _proj(rng, (4, 12))

        def build(ts):
            cat = T.concat([ts[0], ts[1]], axis=0)        # (4,3,4)
            pm = T.permute(cat, (0, 2, 1))                # (4,4,3)
            rs = T.reshape(pm, (4, 12))
            nw = T.narrow(rs, 1, 0, 12)
            return random_projection_loss(nw, p)

        fd_check(build, [a, b], rng=rng)

    def test_reductions(self):
        rng = np.random.default_rng(1210)
        x = rng.standard_normal((3, 4, 5)).astype(np.float32)
        p1 = _proj(rng, (3, 5))
        fd_check(lambda ts: random_projection_loss(T.tmean(ts[0], axis=1), p1) +
                            T.tsum(ts[0]) * 0.01,
                 [x], rng=rng)


class TestComposedGrads:
    def test_attention_module(self):
        rng = np.random.default_rng(1300)
        attn = MultiHeadAttention(dim=8, heads=2, rng=rng)
        x = rng.standard_normal((6, 8)).astype(np.float32)
        p = _proj(rng, (6, 8))
        # k.bias is excluded: a constant added to every key shifts each score
        # row uniformly, which softmax cancels, so its true gradient is zero
        # and a finite-difference quotient is pure float32 rounding noise.
        params = [(n, prm) for n, prm in attn.named_parameters().items()
                  if n != "k.bias"]
        arrays = [x] + [prm.data.copy() for _, prm in params]

        def _locate(mod, dotted):
            parts = dotted.split(".")
            obj = mod
            for prt in parts[:-1]:
                obj = getattr(obj, prt)
            return obj, parts[-1]

        def build(ts):
            # swap module params for the probe leaves, run, then restore
            saved = [prm for _, prm in params]
            for (nm, _), leaf in zip(params, ts[1:]):
                obj, attr = _locate(attn, nm)
                object.__setattr__(obj, attr, leaf)
            try:
                return random_projection_loss(attn(ts[0], ts[0], ts[0]), p)
            finally:
                for (nm, _), orig in zip(params, saved):
                    obj, attr = _locate(attn, nm)
                    object.__setattr__(obj, attr, orig)

        fd_check(build, arrays, rng=rng, max_probes=40)

    def test_transformer_block(self):
        rng = np.random.default_rng(1310)
        blk = TransformerBlock(dim=8, heads=2, mlp_ratio=2, rng=rng)
        blk.eval()
        x = rng.standard_normal((5, 8)).astype(np.float32)
        p = _proj(rng, (5, 8))

        def build(ts):
            return random_projection_loss(blk(ts[0]), p)

        fd_check(build, [x], rng=rng, max_probes=40)

    def test_composite_conv_gelu_layernorm(self):
        rng = np.random.default_rng(1320)
        x = rng.standard_normal((2, 4, 4, 4)).astype(np.float32)
        w = (rng.standard_normal((2, 2, 3, 3, 3)) * 0.4).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        g = rng.standard_normal(4).astype(np.float32)
        be = rng.standard_normal(4).astype(np.float32)
        p = _proj(rng, (2 * 4 * 4, 4))

        def build(ts):
            y = T.conv3d(ts[0], ts[1], ts[2], (1, 1, 1), (1, 1, 1))
            y = T.gelu(y)
            y = T.reshape(y, (2 * 4 * 4, 4))
            y = T.layer_norm(y, ts[3], ts[4])
            return random_projection_loss(y, p) * (1.0 / y.size)

        fd_check(build, [x, w, b, g, be], rng=rng, max_probes=60)
