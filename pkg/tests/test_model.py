"""End-to-end models: shapes, prompt conditioning, parameter accounting."""

import numpy as np
import pytest

from arborseg.config import ModelConfig
from arborseg.model import BranchModel, SomaModel, count_parameters
from arborseg.tensor import Tensor


@pytest.fixture(scope="module")
def tiny_cfg():
    return ModelConfig.for_variant("tiny")


@pytest.fixture(scope="module")
def volume():
    rng = np.random.default_rng(0)
    return rng.uniform(0, 1, (1, 16, 64, 64)).astype(np.float32)


def test_soma_model_shape_and_range(tiny_cfg, volume):
    model = SomaModel(tiny_cfg, seed=1)
    model.eval()
    out = model(Tensor(volume)).data
    assert out.shape == (1, 16, 64, 64)
    assert 0.0 < out.min() and out.max() < 1.0


def test_soma_model_deterministic_in_eval(tiny_cfg, volume):
    model = SomaModel(tiny_cfg, seed=1)
    model.eval()
    a = model(Tensor(volume)).data
    b = model(Tensor(volume)).data
    np.testing.assert_array_equal(a, b)


def test_dropout_only_active_in_train_mode(tiny_cfg, volume):
    model = SomaModel(tiny_cfg, seed=1)
    model.train()
    a = model(Tensor(volume)).data
    b = model(Tensor(volume)).data
    assert np.abs(a - b).max() > 0.0      # dropout rng advances between calls


def test_branch_model_accepts_multiple_prompts(tiny_cfg, volume):
    model = BranchModel(tiny_cfg, seed=2)
    model.eval()
    out = model(Tensor(volume), [(10, 20, 5), (50, 40, 12)]).data
    assert out.shape == (1, 16, 64, 64)


def test_branch_output_depends_on_prompt(tiny_cfg, volume):
    model = BranchModel(tiny_cfg, seed=2)
    model.eval()
    a = model(Tensor(volume), [(8, 8, 2)]).data
    b = model(Tensor(volume), [(56, 56, 14)]).data
    assert np.abs(a - b).max() > 1e-6


def test_branch_rejects_out_of_volume_prompt(tiny_cfg, volume):
    model = BranchModel(tiny_cfg, seed=2)
    model.eval()
    with pytest.raises(ValueError):
        model(Tensor(volume), [(64, 0, 0)])


def test_parameter_groups_soma(tiny_cfg):
    counts = count_parameters(SomaModel(tiny_cfg, seed=0))
    assert counts["prompt"] == 0 and counts["skips"] == 0
    assert counts["encoder"] > 0 and counts["decoder"] > 0
    assert counts["total"] == counts["encoder"] + counts["decoder"]


def test_parameter_groups_branch(tiny_cfg):
    counts = count_parameters(BranchModel(tiny_cfg, seed=0))
    for group in ("encoder", "skips", "decoder", "prompt"):
        assert counts[group] > 0, group
    assert counts["total"] == sum(counts[g] for g in
                                  ("encoder", "skips", "decoder", "prompt"))


def test_parameter_counts_independent_of_seed(tiny_cfg):
    a = count_parameters(BranchModel(tiny_cfg, seed=0))
    b = count_parameters(BranchModel(tiny_cfg, seed=99))
    assert a == b


def test_tiny_architecture_fingerprint(tiny_cfg):
    # frozen totals pin the architecture against silent structural drift
    counts = count_parameters(BranchModel(tiny_cfg, seed=0))
    assert counts == {"encoder": 1_187_296, "skips": 353_680,
                      "decoder": 433_137, "prompt": 31_088,
                      "total": 2_005_201}


def test_same_seed_reproduces_initialization(tiny_cfg, volume):
    a = SomaModel(tiny_cfg, seed=5)
    b = SomaModel(tiny_cfg, seed=5)
    for name, pa in a.named_parameters().items():
        np.testing.assert_array_equal(pa.data, b.named_parameters()[name].data)
