"""
Tests for quantization, device noise and the noise/accuracy study.
"""

from unittest.mock import patch

import numpy as np
import pytest
import torch

from oen_npu.atoms.shared.config import DatasetSpec, ModelSpec, NoiseConfig, QuantConfig, SimulationParams
from oen_npu.atoms.shared.data_types import Granularity, MatmulRoute, NoiseMode, NoiseScope
from oen_npu.atoms.shared.presets import hardware_preset
from oen_npu.molecules.quant_noise import (
    MatmulContext,
    engine_matmul,
    eval_under_noise,
    mixed_matmul,
    model_size_study,
    noisy_matmul,
    qat_finetune,
    quantize,
)
from oen_npu.molecules.toy_model import accuracy, make_dataset, train_toy

INT8 = QuantConfig(bits=8, outlier_threshold=6.0)
DATASET = DatasetSpec(classes=3, samples_per_class=40, seq_len=4, feature_dim=6)
MODEL = ModelSpec(embed_dim=16, heads=2, layers=1, epochs=40, target_accuracy=0.9)


@pytest.fixture(scope="module")
def trained():
    return train_toy(DATASET, MODEL, seed=3)


def _randn(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def test_quantize_symmetric_per_vector():
    """Test codes, per-row scales and the half-step roundtrip bound."""
    x = _randn(4, 16)
    q = quantize(x, INT8)
    assert q.scales.shape == (4, 1)
    assert q.codes.dtype == torch.int32
    assert int(q.codes.abs().max()) == 127
    assert (q.dequantize() - x).abs().max() <= q.scales.max() / 2 + 1e-12
    assert torch.allclose(q.scales.squeeze(1), x.abs().amax(dim=1) / 127)


def test_quantize_per_tensor():
    """Test a single scale for the whole tensor."""
    x = _randn(3, 5)
    q = quantize(x, INT8.model_copy(update={"granularity": Granularity.PER_TENSOR}))
    assert q.scales.shape == (1, 1)
    assert float(q.scales) == pytest.approx(float(x.abs().max()) / 127)


def test_quantize_keeps_outliers_exact():
    """Test that entries above the threshold are kept at full precision."""
    x = torch.tensor([[0.5, -20.0, 1.0], [7.5, 0.25, -0.5]], dtype=torch.float64)
    q = quantize(x, INT8)
    assert q.outliers == [((0, 1), -20.0), ((1, 0), 7.5)]
    assert q.codes[0, 1] == 0 and q.codes[1, 0] == 0
    assert q.dequantize()[0, 1] == -20.0
    # inlier scales ignore the outliers
    assert float(q.scales[0]) == pytest.approx(1.0 / 127)


def test_quantize_asymmetric():
    """Test the asymmetric mode on a one-sided range."""
    x = torch.linspace(0.0, 5.0, 50, dtype=torch.float64).reshape(2, 25)
    q = quantize(x, INT8.model_copy(update={"symmetric": False}))
    assert (q.dequantize() - x).abs().max() <= q.scales.max() / 2 + 1e-12
    assert int(q.codes.min()) == -127 and int(q.codes.max()) == 127


def test_quantize_zero_vector_and_errors():
    """Test the unit scale for all-zero vectors and the input checks."""
    q = quantize(torch.zeros(2, 3, dtype=torch.float64), INT8)
    assert torch.equal(q.scales, torch.ones(2, 1, dtype=torch.float64))
    assert int(q.codes.abs().sum()) == 0
    with pytest.raises(ValueError):
        quantize(torch.tensor([1.0, float("nan")]), INT8)
    with pytest.raises(ValueError):
        quantize(torch.ones(3), QuantConfig(bits=None))


def test_mixed_matmul_handles_outliers():
    """Test that the outlier decomposition keeps large values accurate."""
    x = _randn(8, 32, seed=1)
    w = _randn(5, 32, seed=2) * 0.1
    x[0, 3] = 50.0
    x[4, 10] = -40.0
    exact = x @ w.T
    mixed = mixed_matmul(x, w, INT8)
    no_outliers = mixed_matmul(x, w, INT8.model_copy(update={"outlier_threshold": 1e9}))
    err_mixed = (mixed - exact).abs().max()
    err_plain = (no_outliers - exact).abs().max()
    assert err_mixed < 0.05
    assert err_mixed < err_plain


def test_mixed_matmul_straight_through_gradient():
    """Test that gradients pass the rounding in QAT mode."""
    x = _randn(4, 8, seed=3).requires_grad_(True)
    w = _randn(3, 8, seed=4).requires_grad_(True)
    mixed_matmul(x, w, INT8, ste=True).sum().backward()
    torch.testing.assert_close(x.grad, w.detach().sum(dim=0).expand(4, 8), atol=0.05, rtol=0.05)
    assert w.grad is not None and torch.isfinite(w.grad).all()


def test_clean_context_is_plain_matmul():
    """Test that no quantization and no noise leave the product untouched."""
    x, w = _randn(2, 3, 4), _randn(5, 4, seed=1)
    ctx = MatmulContext()
    assert ctx.clean
    torch.testing.assert_close(ctx.matmul(x, w), torch.matmul(x, w.T), rtol=0, atol=0)


def test_context_validation():
    """Test sigma range, the engine's hardware requirement and the shape check."""
    with pytest.raises(ValueError):
        MatmulContext(ncfg=NoiseConfig(sigma=1.0))
    with pytest.raises(ValueError):
        MatmulContext(route=MatmulRoute.ENGINE)
    with pytest.raises(ValueError):
        MatmulContext().matmul(_randn(2, 3), _randn(2, 4))


def test_noise_is_unbiased():
    """Test that multiplicative noise averages to the clean product."""
    x, w = _randn(3, 6, seed=5), _randn(4, 6, seed=6)
    ncfg = NoiseConfig(sigma=0.1)
    reference = x @ w.T
    for n in (100, 1600):
        samples = torch.stack([noisy_matmul(x, w, None, ncfg, seed=i) for i in range(n)])
        tolerance = 5 * samples.std(dim=0) / np.sqrt(n)
        assert ((samples.mean(dim=0) - reference).abs() <= tolerance).all()


def test_noise_reproducible_per_seed():
    """Test that the same seed gives the same noisy product."""
    x, w = _randn(3, 6), _randn(4, 6, seed=1)
    ncfg = NoiseConfig(sigma=0.05)
    torch.testing.assert_close(noisy_matmul(x, w, INT8, ncfg, 9), noisy_matmul(x, w, INT8, ncfg, 9))
    assert not torch.equal(noisy_matmul(x, w, INT8, ncfg, 9), noisy_matmul(x, w, INT8, ncfg, 10))


def test_per_call_and_frozen_modes():
    """Test fresh draws per call against one frozen draw per device position."""
    x, w = _randn(3, 6), _randn(4, 6, seed=1)
    per_call = MatmulContext(ncfg=NoiseConfig(sigma=0.05), seed=1)
    assert not torch.equal(per_call.matmul(x, w, "a"), per_call.matmul(x, w, "a"))
    frozen = MatmulContext(ncfg=NoiseConfig(sigma=0.05, mode=NoiseMode.FROZEN_PER_DEVICE), seed=1)
    first = frozen.matmul(x, w, "a")
    torch.testing.assert_close(frozen.matmul(x, w, "a"), first, rtol=0, atol=0)
    assert not torch.equal(frozen.matmul(x, w, "b"), first)


def test_weight_only_noise_is_linear_in_x():
    """Test that frozen weight noise acts as one fixed perturbed matrix."""
    x1, x2, w = _randn(2, 6), _randn(2, 6, seed=1), _randn(4, 6, seed=2)
    ncfg = NoiseConfig(sigma=0.05, apply_to=NoiseScope.WEIGHTS, mode=NoiseMode.FROZEN_PER_DEVICE)
    ctx = MatmulContext(ncfg=ncfg, seed=4)
    torch.testing.assert_close(ctx.matmul(x1 + x2, w), ctx.matmul(x1, w) + ctx.matmul(x2, w))


def test_engine_route():
    """Test that the pixel engine reproduces a small product to a few LSB."""
    hardware = hardware_preset("table1")
    x, w = _randn(2, 8, seed=7), _randn(3, 8, seed=8)
    y = noisy_matmul(x, w, None, NoiseConfig(), seed=2, route=MatmulRoute.ENGINE, hardware=hardware)
    scale = float(x.abs().max() * w.abs().max())
    tolerance = (5 * 8 / 127 + 8 * 2 / 254) * scale
    assert (y - x @ w.T).abs().max() <= tolerance


def test_engine_matmul_batched():
    """Test batched weights through the engine path."""
    x, w = _randn(2, 3, 4, seed=1), _randn(2, 5, 4, seed=2)
    y = engine_matmul(x, w, hardware_preset("table1"), SimulationParams(), seed=0)
    assert y.shape == (2, 3, 5)


def test_eval_under_noise(trained):
    """Test the curve layout, the clean point and determinism."""
    data = make_dataset(DATASET, trained.seed)
    clean = accuracy(trained, data.test_x, data.test_y)
    curve = eval_under_noise(trained, None, [0.0, 0.05], trials=3, seed=1, threads=2, label="fp")
    assert [p.sigma for p in curve.points] == [0.0, 0.05]
    assert curve.points[0].accuracies == [clean] * 3
    assert curve.points[0].std_accuracy == 0.0
    assert len(curve.rows()) == 6
    assert curve.summary()["label"] == "fp" and not curve.quantized
    again = eval_under_noise(trained, None, [0.0, 0.05], trials=3, seed=1, threads=1)
    assert again.points == curve.points


def test_eval_under_noise_arguments(trained):
    """Test sigma range and trial count checks."""
    with pytest.raises(ValueError):
        eval_under_noise(trained, None, [1.0], trials=1, seed=0)
    with pytest.raises(ValueError):
        eval_under_noise(trained, None, [0.0], trials=0, seed=0)


def test_int8_close_to_full_precision(trained):
    """Test that INT8 post-training quantization costs little accuracy."""
    fp = eval_under_noise(trained, None, [0.0], trials=1, seed=0)
    int8 = eval_under_noise(trained, INT8, [0.0], trials=1, seed=0)
    assert int8.quantized
    assert int8.points[0].mean_accuracy >= fp.points[0].mean_accuracy - 0.05


def test_qat_not_below_ptq_on_test_split(trained):
    """Test QAT against PTQ on the untouched test split, and that the input is left alone."""
    before = [p.clone() for p in trained.parameters()]
    data = make_dataset(DATASET, trained.seed)
    ptq = accuracy(trained, data.test_x, data.test_y, MatmulContext(INT8))
    tuned = qat_finetune(trained, INT8, epochs=2, seed=0)
    assert accuracy(tuned, data.test_x, data.test_y, MatmulContext(INT8)) >= ptq
    for a, b in zip(before, trained.parameters()):
        assert torch.equal(a, b)
    unchanged = qat_finetune(trained, INT8, epochs=0, seed=0)
    assert unchanged is not trained
    with pytest.raises(ValueError):
        qat_finetune(trained, QuantConfig(bits=None), epochs=1, seed=0)


def test_qat_selects_on_validation_only(trained):
    """Test that QAT checkpoint selection never scores the test split."""
    with patch("oen_npu.molecules.quant_noise.accuracy", wraps=accuracy) as spy:
        qat_finetune(trained, QuantConfig(bits=4), epochs=3, seed=0)
    assert spy.call_count == 4
    assert [call.args[1].shape[0] for call in spy.call_args_list] == [3 * 5] * 4


def test_model_size_study():
    """Test that both model sizes are trained and evaluated on the same grid."""
    small = MODEL.model_copy(update={"embed_dim": 8})
    curves = model_size_study(DATASET, small, MODEL, None, [0.0, 0.05], trials=1, seed=3)
    assert set(curves) == {"small", "large"}
    assert [p.sigma for p in curves["large"].points] == [0.0, 0.05]
