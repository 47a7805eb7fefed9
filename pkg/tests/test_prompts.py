"""Point-prompt encoder: normalization, Fourier features, projections."""

import numpy as np
import pytest

from arborseg.prompts import PromptEncoder
from arborseg.tensor import Tensor


@pytest.fixture(scope="module")
def enc():
    return PromptEncoder(16, np.random.default_rng(0))


def test_normalize_center_point(enc):
    out = enc.normalize_points([(32, 32, 8)], (64, 64, 16))
    np.testing.assert_allclose(out, [[0.5, 0.5, 0.5]])


def test_normalize_divides_per_axis(enc):
    out = enc.normalize_points([(16, 8, 4), (0, 0, 0)], (64, 32, 16))
    np.testing.assert_allclose(out, [[0.25, 0.25, 0.25], [0, 0, 0]])


def test_normalize_single_point_promoted_to_matrix(enc):
    assert enc.normalize_points((1, 2, 3), (64, 64, 16)).shape == (1, 3)


def test_normalize_rejects_out_of_bounds(enc):
    with pytest.raises(ValueError, match="256"):
        enc.normalize_points([(256, 0, 0)], (64, 64, 16))
    with pytest.raises(ValueError):
        enc.normalize_points([(0, -1, 0)], (64, 64, 16))
    with pytest.raises(ValueError):                  # upper edge is exclusive
        enc.normalize_points([(64, 0, 0)], (64, 64, 16))


def test_normalize_rejects_wrong_width(enc):
    with pytest.raises(ValueError, match=r"\(N, 3\)"):
        enc.normalize_points(np.zeros((2, 2)), (64, 64, 16))


def test_fourier_pe_unit_circle(enc):
    # each (sin, cos) column pair lies on the unit circle
    pts = enc.normalize_points([(1, 2, 3), (40, 50, 10)], (64, 64, 16))
    pe = enc.fourier_pe(pts)
    assert pe.shape == (2, 128)
    np.testing.assert_allclose(pe[:, :64] ** 2 + pe[:, 64:] ** 2,
                               np.ones((2, 64)), rtol=1e-5, atol=1e-6)


def test_fourier_pe_matches_direct_formula(enc):
    pts = np.array([[0.25, 0.5, 0.75]], np.float32)
    angles = 2 * np.pi * (pts.astype(np.float64) @ enc.phi.astype(np.float64))
    expected = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    np.testing.assert_allclose(enc.fourier_pe(pts), expected, rtol=1e-5, atol=1e-6)


def test_duplicate_points_get_identical_rows(enc):
    emb, pe = enc.encode([(10, 20, 5), (10, 20, 5)], (64, 64, 16))
    np.testing.assert_array_equal(pe[0], pe[1])
    np.testing.assert_array_equal(emb.data[0], emb.data[1])


def test_distinct_points_get_distinct_rows(enc):
    _, pe = enc.encode([(10, 20, 5), (11, 20, 5)], (64, 64, 16))
    assert np.abs(pe[0] - pe[1]).max() > 1e-4


def test_encode_adds_learned_base():
    enc = PromptEncoder(16, np.random.default_rng(1))
    emb, pe = enc.encode([(10, 20, 5)], (64, 64, 16))
    np.testing.assert_array_equal(emb.data, pe)      # base starts at zero
    enc.w_point.data[:] = 2.5
    emb, pe = enc.encode([(10, 20, 5)], (64, 64, 16))
    np.testing.assert_allclose(emb.data, pe + 2.5, rtol=1e-6)


def test_encode_gradient_reaches_base_vector():
    enc = PromptEncoder(16, np.random.default_rng(2))
    emb, _ = enc.encode([(1, 2, 3), (4, 5, 6), (7, 8, 9)], (64, 64, 16))
    from arborseg import tensor as T
    T.tsum(emb).backward()
    np.testing.assert_array_equal(enc.w_point.grad, np.full(128, 3.0))


def test_random_features_are_frozen(enc):
    assert "phi" in enc.named_buffers()
    assert all("phi" not in name for name in enc.named_parameters())


def test_projection_widths(enc):
    emb, _ = enc.encode([(1, 2, 3)], (64, 64, 16))
    for level, width in enumerate((16, 32, 64, 128)):
        assert enc.project(emb, level).shape == (1, width)


def test_projection_rejects_bad_level(enc):
    emb, _ = enc.encode([(1, 2, 3)], (64, 64, 16))
    with pytest.raises(ValueError, match="level"):
        enc.project(emb, 4)


def test_same_projection_for_embedding_and_pe(enc):
    # the positional stream uses the same per-level linear map
    emb, pe = enc.encode([(3, 4, 5)], (64, 64, 16))
    a = enc.project(emb, 1).data
    b = enc.project(Tensor(pe), 1).data
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)  # base is zero
