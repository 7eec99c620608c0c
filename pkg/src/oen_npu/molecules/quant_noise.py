"""
Outlier-aware INT8 quantization and multiplicative device noise for matmuls.

Tensors follow the nn.Linear layout: activations X have shape (..., in) and weights W
have shape (..., out, in), so Y = X W^T. Per-vector scales run over the last dimension
of both operands, which is the reduction dimension of the product.
"""

import concurrent.futures
import logging
import zlib
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict

from ..atoms.shared.config import DatasetSpec, HardwareConfig, ModelSpec, NoiseConfig, QuantConfig, SimulationParams
from ..atoms.shared.data_types import Fidelity, Granularity, MatmulRoute, NoiseMode, NoiseScope
from ..atoms.shared.utils import derive_seed
from .mmm_engine import execute
from .toy_model import ToyModel, accuracy, clone, fit_epoch, make_dataset, train_toy

logger = logging.getLogger(__name__)

# largest sigma the accuracy study is meant for; larger values are allowed but logged
STUDY_SIGMA_MAX = 0.10


class QuantizedTensor(BaseModel):
    """Integer codes with their scales plus the outliers kept at full precision."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    codes: torch.Tensor
    scales: torch.Tensor
    zero_points: torch.Tensor
    outlier_mask: torch.Tensor
    outlier_values: torch.Tensor
    bits: int

    @property
    def outliers(self) -> List[Tuple[Tuple[int, ...], float]]:
        """Sparse (index, exact value) list."""
        indices = self.outlier_mask.nonzero().tolist()
        return [(tuple(idx), float(v)) for idx, v in zip(indices, self.outlier_values.tolist())]

    def dequantize_inliers(self) -> torch.Tensor:
        """Dequantized inliers with zeros at outlier positions."""
        values = (self.codes.to(self.scales.dtype) + self.zero_points) * self.scales
        return values.masked_fill(self.outlier_mask, 0.0)

    def outlier_dense(self) -> torch.Tensor:
        """Outlier originals with zeros elsewhere."""
        dense = torch.zeros(self.codes.shape, dtype=self.scales.dtype)
        dense[self.outlier_mask] = self.outlier_values
        return dense

    def dequantize(self) -> torch.Tensor:
        return self.dequantize_inliers() + self.outlier_dense()


def _reduce(values: torch.Tensor, granularity: Granularity, op) -> torch.Tensor:
    if granularity == Granularity.PER_TENSOR:
        return op(values.reshape(-1), dim=0).reshape([1] * values.dim())
    return op(values, dim=-1, keepdim=True)


def _amax(values, dim, keepdim=False):
    return torch.amax(values, dim=dim, keepdim=keepdim)


def _amin(values, dim, keepdim=False):
    return torch.amin(values, dim=dim, keepdim=keepdim)


def quantize(x: torch.Tensor, cfg: QuantConfig) -> QuantizedTensor:
    """
    Quantize with outlier extraction.

    Entries with |x| > cfg.outlier_threshold become outliers and are kept exactly; their
    codes are 0. Inliers get code = round(x/scale) with scale = absmax/(2^(bits-1)-1)
    over the inliers of each vector (or of the whole tensor). A vector with no nonzero
    inliers gets scale 1.

    Args:
        x: Tensor to quantize
        cfg: Quantization config; bits must be set

    Returns:
        QuantizedTensor

    Raises:
        ValueError: On NaN/inf entries or when cfg.bits is None
    """
    if cfg.bits is None:
        raise ValueError("quantize needs a bit width; bits=None means quantization is off")
    x = torch.as_tensor(x)
    if not torch.is_floating_point(x):
        x = x.to(torch.float64)
    if not torch.isfinite(x).all():
        raise ValueError("Cannot quantize a tensor with NaN or inf entries")
    if x.dim() == 0:
        x = x.reshape(1)

    qmax = 2 ** (cfg.bits - 1) - 1
    mask = x.abs() > cfg.outlier_threshold
    inliers = x.masked_fill(mask, 0.0)
    if x.numel() == 0:
        empty = torch.zeros(x.shape, dtype=x.dtype)
        return QuantizedTensor(
            codes=empty.to(torch.int32), scales=torch.ones(1, dtype=x.dtype), zero_points=torch.zeros(1, dtype=x.dtype),
            outlier_mask=mask, outlier_values=x[mask], bits=cfg.bits,
        )

    if cfg.symmetric:
        span = _reduce(inliers.abs(), cfg.granularity, _amax)
        zero_points = torch.zeros_like(span)
        scales = torch.where(span > 0, span / qmax, torch.ones_like(span))
    else:
        hi = _reduce(inliers, cfg.granularity, _amax)
        lo = _reduce(inliers, cfg.granularity, _amin)
        span = hi - lo
        scales = torch.where(span > 0, span / (2 * qmax), torch.ones_like(span))
        # offset in units of the scale; left unrounded so the range ends stay representable
        zero_points = (hi + lo) / 2 / scales

    codes = torch.round(inliers / scales - zero_points).clamp(-qmax, qmax)
    codes = codes.masked_fill(mask, 0.0).to(torch.int32)
    return QuantizedTensor(
        codes=codes,
        scales=scales,
        zero_points=zero_points,
        outlier_mask=mask,
        outlier_values=x[mask],
        bits=cfg.bits,
    )


def _ste(original: torch.Tensor, replacement: torch.Tensor) -> torch.Tensor:
    # straight-through: forward uses replacement, gradient flows to original unchanged
    return original + (replacement - original).detach()


def mixed_matmul(x: torch.Tensor, w: torch.Tensor, cfg: QuantConfig, ste: bool = False) -> torch.Tensor:
    """
    Mixed-precision product with the outlier decomposition.

    Y = deq(X_in) deq(W_in)^T + X_out W^T + deq(X_in) W_out^T, where the _in parts hold
    the inliers (zeros at outliers) and the _out parts hold the outliers.

    Args:
        x: Activations (..., in)
        w: Weights (..., out, in)
        cfg: Quantization config
        ste: Pass gradients straight through the rounding (for QAT)

    Returns:
        Y of shape (..., out)
    """
    qx = quantize(x.detach(), cfg)
    qw = quantize(w.detach(), cfg)
    x_in = qx.dequantize_inliers().to(x.dtype)
    w_in = qw.dequantize_inliers().to(w.dtype)
    x_out_mask = qx.outlier_mask
    w_out_mask = qw.outlier_mask
    x_out = x.masked_fill(~x_out_mask, 0.0)
    w_out = w.masked_fill(~w_out_mask, 0.0)
    if ste:
        x_in = _ste(x.masked_fill(x_out_mask, 0.0), x_in)
        w_in = _ste(w.masked_fill(w_out_mask, 0.0), w_in)
    return (
        torch.matmul(x_in, w_in.transpose(-1, -2))
        + torch.matmul(x_out, w.transpose(-1, -2))
        + torch.matmul(x_in, w_out.transpose(-1, -2))
    )


def engine_matmul(
    x: torch.Tensor,
    w: torch.Tensor,
    hardware: HardwareConfig,
    sim: SimulationParams,
    seed: int,
) -> torch.Tensor:
    """
    Run X W^T through the pixel-level engine at full_noise fidelity.

    Operands are scaled by their absmax into [-1, 1] and the result is scaled back.
    Batched weights are executed one leading index at a time.
    """
    if w.dim() > 2:
        lead = torch.broadcast_shapes(x.shape[:-2], w.shape[:-2])
        xb = x.expand(*lead, *x.shape[-2:]).reshape(-1, *x.shape[-2:])
        wb = w.expand(*lead, *w.shape[-2:]).reshape(-1, *w.shape[-2:])
        outs = [engine_matmul(xb[i], wb[i], hardware, sim, derive_seed(seed, i)) for i in range(xb.shape[0])]
        return torch.stack(outs).reshape(*lead, x.shape[-2], w.shape[-2])

    lead_shape = x.shape[:-1]
    x2 = x.detach().to(torch.float64).reshape(-1, x.shape[-1]).numpy()
    w2 = w.detach().to(torch.float64).numpy()
    sx = float(np.abs(x2).max(initial=0.0)) or 1.0
    sw = float(np.abs(w2).max(initial=0.0)) or 1.0
    result = execute((x2 / sx).T, w2 / sw, hardware, Fidelity.FULL_NOISE, seed, sim, name="engine_matmul")
    y = torch.from_numpy(np.ascontiguousarray(result.y.T) * sx * sw).to(x.dtype)
    return y.reshape(*lead_shape, w.shape[0])


class MatmulContext:
    """
    Quantization, noise and routing choices applied to every matmul of a forward pass.

    Per-call noise draws a fresh stream for each call in forward order. Frozen noise
    draws one multiplier tensor per (matmul key, operand, shape) and reuses it.
    """

    def __init__(
        self,
        qcfg: Optional[QuantConfig] = None,
        ncfg: NoiseConfig = NoiseConfig(),
        seed: Optional[int] = None,
        route: MatmulRoute = MatmulRoute.GAUSSIAN,
        hardware: Optional[HardwareConfig] = None,
        sim: SimulationParams = SimulationParams(),
        ste: bool = False,
    ):
        if not 0.0 <= ncfg.sigma < 1.0:
            raise ValueError(f"sigma must lie in [0, 1), got {ncfg.sigma}")
        if route == MatmulRoute.ENGINE and hardware is None:
            raise ValueError("The engine route needs a hardware config")
        self.qcfg = qcfg
        self.ncfg = ncfg
        self.seed = ncfg.seed if seed is None else seed
        self.route = route
        self.hardware = hardware
        self.sim = sim
        self.ste = ste
        self.calls = 0
        self._frozen: Dict[Tuple[str, int, Tuple[int, ...]], torch.Tensor] = {}

    @property
    def quantizing(self) -> bool:
        return self.qcfg is not None and self.qcfg.bits is not None

    @property
    def clean(self) -> bool:
        return not self.quantizing and self.ncfg.sigma == 0 and self.route == MatmulRoute.GAUSSIAN

    def _multiplier(self, shape, dtype, key: str, operand: int, call: int) -> torch.Tensor:
        if self.ncfg.mode == NoiseMode.FROZEN_PER_DEVICE:
            cache_key = (key, operand, tuple(shape))
            if cache_key not in self._frozen:
                stream_seed = derive_seed(self.seed, zlib.crc32(key.encode("utf-8")), operand)
                generator = torch.Generator().manual_seed(stream_seed)
                self._frozen[cache_key] = 1.0 + self.ncfg.sigma * torch.randn(shape, generator=generator, dtype=dtype)
            return self._frozen[cache_key]
        generator = torch.Generator().manual_seed(derive_seed(self.seed, call, operand))
        return 1.0 + self.ncfg.sigma * torch.randn(shape, generator=generator, dtype=dtype)

    def matmul(self, x: torch.Tensor, w: torch.Tensor, key: str = "matmul") -> torch.Tensor:
        """
        Y = X W^T under this context.

        Raises:
            ValueError: If the inner dimensions differ
        """
        if x.shape[-1] != w.shape[-1]:
            raise ValueError(f"Shape mismatch: X {tuple(x.shape)} and W {tuple(w.shape)} differ in the inner dimension")
        call = self.calls
        self.calls += 1
        if self.clean:
            return torch.matmul(x, w.transpose(-1, -2))

        if self.ncfg.sigma > 0:
            if self.ncfg.apply_to in (NoiseScope.WEIGHTS, NoiseScope.BOTH):
                w = w * self._multiplier(w.shape, w.dtype, key, 0, call)
            if self.ncfg.apply_to in (NoiseScope.ACTIVATIONS, NoiseScope.BOTH):
                x = x * self._multiplier(x.shape, x.dtype, key, 1, call)

        if self.route == MatmulRoute.ENGINE:
            return engine_matmul(x, w, self.hardware, self.sim, derive_seed(self.seed, call, 2))
        if self.quantizing:
            return mixed_matmul(x, w, self.qcfg, ste=self.ste)
        return torch.matmul(x, w.transpose(-1, -2))


def noisy_matmul(
    x: torch.Tensor,
    w: torch.Tensor,
    qcfg: Optional[QuantConfig],
    ncfg: NoiseConfig,
    seed: int,
    route: MatmulRoute = MatmulRoute.GAUSSIAN,
    hardware: Optional[HardwareConfig] = None,
    sim: SimulationParams = SimulationParams(),
) -> torch.Tensor:
    """
    Y = X' W'^T with X' = X(1+eps_x), W' = W(1+eps_w), eps ~ N(0, sigma^2) elementwise.

    Args:
        x: Activations (..., in)
        w: Weights (out, in) or batched (..., out, in)
        qcfg: Quantization config; None or bits=None turns quantization off
        ncfg: Noise config
        seed: Seed for the noise streams
        route: GAUSSIAN applies the quantized mixed-precision product, ENGINE runs the
            perturbed operands through the pixel engine (quantization then comes from the
            DAC and ADC models)
        hardware: Hardware config for the ENGINE route
        sim: Simulation parameters for the ENGINE route

    Returns:
        Y of shape (..., out)

    Raises:
        ValueError: On shape mismatch
    """
    return MatmulContext(qcfg, ncfg, seed, route, hardware, sim).matmul(x, w)


class CurvePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: float
    mean_accuracy: float
    std_accuracy: float
    accuracies: List[float]


class NoiseCurve(BaseModel):
    """Accuracy against noise strength."""
    model_config = ConfigDict(frozen=True)

    label: str = ""
    quantized: bool
    points: List[CurvePoint]

    def rows(self) -> List[Dict[str, object]]:
        """One row per (sigma, trial)."""
        return [
            {"sigma": p.sigma, "trial": t, "accuracy": a}
            for p in self.points
            for t, a in enumerate(p.accuracies)
        ]

    def summary(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "quantized": self.quantized,
            "points": [
                {"sigma": p.sigma, "mean_accuracy": p.mean_accuracy, "std_accuracy": p.std_accuracy}
                for p in self.points
            ],
        }


def _check_grid(sigma_grid: Sequence[float]) -> List[float]:
    grid = [float(s) for s in sigma_grid]
    for sigma in grid:
        if not 0.0 <= sigma < 1.0:
            raise ValueError(f"sigma must lie in [0, 1), got {sigma}")
    if grid and max(grid) > STUDY_SIGMA_MAX:
        logger.warning(f"sigma grid reaches {max(grid)}, beyond the studied range [0, {STUDY_SIGMA_MAX}]")
    return grid


def eval_under_noise(
    model: ToyModel,
    qcfg: Optional[QuantConfig],
    sigma_grid: Sequence[float],
    trials: int,
    seed: int,
    noise: NoiseConfig = NoiseConfig(),
    route: MatmulRoute = MatmulRoute.GAUSSIAN,
    hardware: Optional[HardwareConfig] = None,
    sim: SimulationParams = SimulationParams(),
    threads: Optional[int] = None,
    label: str = "",
) -> NoiseCurve:
    """
    Held-out accuracy with every matmul of the model replaced by the noisy product.

    Args:
        model: Trained model (its dataset spec and seed regenerate the held-out split)
        qcfg: Quantization config, None for full precision
        sigma_grid: Noise strengths
        trials: Trials per sigma
        seed: Base seed; trial (i, t) uses the stream (seed, i, t)
        noise: Template for apply_to and mode; its sigma and seed are replaced
        route: Gaussian proxy or the engine path
        hardware: Hardware config for the engine path
        sim: Simulation parameters for the engine path
        threads: Worker cap
        label: Curve label

    Returns:
        NoiseCurve with trials collected in (sigma, trial) order
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    grid = _check_grid(sigma_grid)
    data = make_dataset(model.dataset_spec, model.seed)

    def run_trial(sigma_index: int, trial: int) -> float:
        ncfg = noise.model_copy(update={"sigma": grid[sigma_index]})
        ctx = MatmulContext(qcfg, ncfg, derive_seed(seed, sigma_index, trial), route, hardware, sim)
        return accuracy(model, data.test_x, data.test_y, ctx)

    jobs = [(i, t) for i in range(len(grid)) for t in range(trials)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        futures = [executor.submit(run_trial, i, t) for i, t in jobs]
        results = [f.result() for f in futures]

    points = []
    for i, sigma in enumerate(grid):
        accs = results[i * trials:(i + 1) * trials]
        points.append(CurvePoint(
            sigma=sigma,
            mean_accuracy=float(np.mean(accs)),
            std_accuracy=float(np.std(accs)),
            accuracies=accs,
        ))
        logger.debug(f"sigma={sigma:.3f}: accuracy {points[-1].mean_accuracy:.4f} +/- {points[-1].std_accuracy:.4f}")
    return NoiseCurve(label=label, quantized=qcfg is not None and qcfg.bits is not None, points=points)


def qat_finetune(
    model: ToyModel,
    qcfg: QuantConfig,
    epochs: int,
    seed: int,
    lr: Optional[float] = None,
) -> ToyModel:
    """
    Quantization-aware fine-tuning with a straight-through estimator.

    The forward pass uses the same mixed-precision product as post-training
    quantization. The returned model is the checkpoint with the best quantized accuracy
    on the validation split, the starting weights included. The test split is never
    looked at.

    Args:
        model: Trained model (left unchanged)
        qcfg: Quantization config with bits set
        epochs: Fine-tuning epochs; 0 returns an unchanged copy
        seed: Shuffling seed
        lr: Learning rate, default a fifth of the training rate

    Returns:
        Fine-tuned copy of the model
    """
    if qcfg.bits is None:
        raise ValueError("QAT needs a bit width")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    tuned = clone(model)
    if epochs == 0:
        return tuned

    spec = model.model_spec
    data = make_dataset(model.dataset_spec, model.seed)
    eval_ctx = MatmulContext(qcfg)
    best_acc = accuracy(tuned, data.val_x, data.val_y, eval_ctx)
    best_state = {k: v.clone() for k, v in tuned.state_dict().items()}
    logger.info(f"PTQ validation accuracy before fine-tuning: {best_acc:.4f}")

    optimizer = torch.optim.SGD(tuned.parameters(), lr=lr or spec.lr / 5, momentum=spec.momentum)
    generator = torch.Generator().manual_seed(derive_seed(seed, 3))
    for epoch in range(1, epochs + 1):
        fit_epoch(tuned, data, optimizer, spec.batch_size, generator, MatmulContext(qcfg, ste=True))
        acc = accuracy(tuned, data.val_x, data.val_y, eval_ctx)
        logger.debug(f"QAT epoch {epoch}: quantized validation accuracy {acc:.4f}")
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.clone() for k, v in tuned.state_dict().items()}

    tuned.load_state_dict(best_state)
    logger.info(f"QAT validation accuracy: {best_acc:.4f}")
    return tuned


def model_size_study(
    dataset_spec: DatasetSpec,
    small: ModelSpec,
    large: ModelSpec,
    qcfg: Optional[QuantConfig],
    sigma_grid: Sequence[float],
    trials: int,
    seed: int,
    threads: Optional[int] = None,
) -> Dict[str, NoiseCurve]:
    """
    Train a smaller and a larger toy model and evaluate both on the same noise grid.

    The accuracy drop from the first to the last sigma is logged for each size.

    Returns:
        {"small": curve, "large": curve}
    """
    curves = {}
    for label, spec in (("small", small), ("large", large)):
        model = train_toy(dataset_spec, spec, seed)
        curve = eval_under_noise(model, qcfg, sigma_grid, trials, seed, threads=threads, label=label)
        drop = curve.points[0].mean_accuracy - curve.points[-1].mean_accuracy if curve.points else 0.0
        logger.info(f"{label} model (embed_dim={spec.embed_dim}, layers={spec.layers}): accuracy drop {drop:.4f}")
        curves[label] = curve
    return curves
