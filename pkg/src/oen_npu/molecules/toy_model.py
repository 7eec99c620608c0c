"""
Toy transformer classifier and synthetic dataset for the hardware-error study.
"""

import copy
import logging
from typing import NamedTuple, Optional, Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..atoms.shared.config import DatasetSpec, ModelSpec
from ..atoms.shared.data_types import TrainingError
from ..atoms.shared.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)

DTYPE = torch.float64


class Matmul(Protocol):
    def matmul(self, x: torch.Tensor, w: torch.Tensor, key: str) -> torch.Tensor:
        ...


class ToyDataset(NamedTuple):
    train_x: torch.Tensor
    train_y: torch.Tensor
    val_x: torch.Tensor
    val_y: torch.Tensor
    test_x: torch.Tensor
    test_y: torch.Tensor


def make_dataset(spec: DatasetSpec, seed: int) -> ToyDataset:
    """
    Gaussian-cluster token-sequence classification.

    Each class has a template sequence of shape (seq_len, feature_dim) drawn from a unit
    normal; samples add cluster_std Gaussian noise. The split is stratified: the test
    split is held out first, the validation split comes out of what remains.

    Args:
        spec: Dataset description
        seed: Base seed

    Returns:
        ToyDataset with float64 features and int64 labels
    """
    n_test = max(1, int(round(spec.samples_per_class * spec.test_fraction)))
    n_val = max(1, int(round(spec.samples_per_class * spec.val_fraction)))
    n_train = spec.samples_per_class - n_test - n_val
    if spec.classes < 1 or n_train < 1:
        raise ValueError(
            f"Need >= 1 class and >= 1 training sample per class, got {spec.classes} classes, "
            f"{spec.samples_per_class} samples per class ({n_test} test, {n_val} validation)"
        )
    rng = make_rng(seed, 0)
    templates = rng.normal(size=(spec.classes, spec.seq_len, spec.feature_dim))
    splits = {name: ([], []) for name in ("train", "val", "test")}
    for label in range(spec.classes):
        samples = templates[label] + spec.cluster_std * rng.normal(
            size=(spec.samples_per_class, spec.seq_len, spec.feature_dim)
        )
        parts = {"test": samples[:n_test], "val": samples[n_test:n_test + n_val], "train": samples[n_test + n_val:]}
        for name, part in parts.items():
            splits[name][0].append(part)
            splits[name][1].append(np.full(len(part), label))

    tensors = {}
    for name, (xs, ys) in splits.items():
        tensors[f"{name}_x"] = torch.from_numpy(np.concatenate(xs)).to(DTYPE)
        tensors[f"{name}_y"] = torch.from_numpy(np.concatenate(ys)).long()
    return ToyDataset(**tensors)


def _product(ctx: Optional[Matmul], x: torch.Tensor, w: torch.Tensor, key: str) -> torch.Tensor:
    if ctx is None:
        return torch.matmul(x, w.transpose(-1, -2))
    return ctx.matmul(x, w, key)


class RoutedLinear(nn.Module):
    """Linear layer whose product goes through the matmul context."""

    def __init__(self, in_dim: int, out_dim: int, key: str):
        super().__init__()
        self.key = key
        layer = nn.Linear(in_dim, out_dim, dtype=DTYPE)
        self.weight = layer.weight
        self.bias = layer.bias

    def forward(self, x: torch.Tensor, ctx: Optional[Matmul] = None) -> torch.Tensor:
        return _product(ctx, x, self.weight, self.key) + self.bias


class Block(nn.Module):
    """Pre-LN encoder block: multi-head attention then a GELU feed-forward network."""

    def __init__(self, dim: int, heads: int, ff_mult: int, index: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"embed_dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.prefix = f"block{index}"
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.qkv = RoutedLinear(dim, 3 * dim, f"{self.prefix}.qkv")
        self.proj = RoutedLinear(dim, dim, f"{self.prefix}.proj")
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.ff1 = RoutedLinear(dim, ff_mult * dim, f"{self.prefix}.ff1")
        self.ff2 = RoutedLinear(ff_mult * dim, dim, f"{self.prefix}.ff2")

    def forward(self, x: torch.Tensor, ctx: Optional[Matmul] = None) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(self.norm1(x), ctx).reshape(b, t, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        scores = _product(ctx, q, k, f"{self.prefix}.scores") / self.head_dim ** 0.5
        attn = torch.softmax(scores, dim=-1)
        mixed = _product(ctx, attn, v.transpose(-1, -2), f"{self.prefix}.mix")
        x = x + self.proj(mixed.transpose(1, 2).reshape(b, t, d), ctx)
        return x + self.ff2(F.gelu(self.ff1(self.norm2(x), ctx)), ctx)


class ToyModel(nn.Module):
    """
    Transformer classifier: embedding, learned positions, pre-LN blocks, mean pooling,
    linear head. Every matmul, including Q K^T and A V, goes through the optional
    matmul context.
    """

    def __init__(self, dataset_spec: DatasetSpec, model_spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.dataset_spec = dataset_spec
        self.model_spec = model_spec
        self.seed = seed
        dim = model_spec.embed_dim
        self.embed = RoutedLinear(dataset_spec.feature_dim, dim, "embed")
        self.position = nn.Parameter(torch.zeros(dataset_spec.seq_len, dim, dtype=DTYPE))
        self.blocks = nn.ModuleList(
            Block(dim, model_spec.heads, model_spec.ff_mult, i) for i in range(model_spec.layers)
        )
        self.norm = nn.LayerNorm(dim, dtype=DTYPE)
        self.head = RoutedLinear(dim, dataset_spec.classes, "head")

    def forward(self, x: torch.Tensor, ctx: Optional[Matmul] = None) -> torch.Tensor:
        h = self.embed(x, ctx) + self.position
        for block in self.blocks:
            h = block(h, ctx)
        return self.head(self.norm(h).mean(dim=1), ctx)


def accuracy(model: ToyModel, x: torch.Tensor, y: torch.Tensor, ctx: Optional[Matmul] = None) -> float:
    """Classification accuracy with gradients disabled."""
    model.eval()
    with torch.no_grad():
        predictions = model(x, ctx).argmax(dim=-1)
    return float((predictions == y).double().mean())


def fit_epoch(
    model: ToyModel,
    data: ToyDataset,
    optimizer: torch.optim.Optimizer,
    batch_size: int,
    generator: torch.Generator,
    ctx: Optional[Matmul] = None,
) -> float:
    """
    One pass of minibatch training over the training split.

    Returns:
        Mean training loss
    """
    model.train()
    order = torch.randperm(len(data.train_y), generator=generator)
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        optimizer.zero_grad()
        loss = F.cross_entropy(model(data.train_x[idx], ctx), data.train_y[idx])
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else 0.0


def train_toy(dataset_spec: DatasetSpec, model_spec: ModelSpec, seed: int) -> ToyModel:
    """
    Train the full-precision baseline with SGD and momentum.

    Model selection only looks at the validation split: the checkpoint with the best
    validation accuracy is kept, and training stops early once validation accuracy is
    perfect. The test split is scored once, at the end, against
    model_spec.target_accuracy.

    Args:
        dataset_spec: Dataset description
        model_spec: Model and training settings
        seed: Seed for data, initialisation and shuffling

    Returns:
        Trained ToyModel

    Raises:
        TrainingError: If the selected checkpoint misses the target on the test split
    """
    data = make_dataset(dataset_spec, seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, 1))
        model = ToyModel(dataset_spec, model_spec, seed)

    generator = torch.Generator().manual_seed(derive_seed(seed, 2))
    optimizer = torch.optim.SGD(model.parameters(), lr=model_spec.lr, momentum=model_spec.momentum)
    best_val = accuracy(model, data.val_x, data.val_y)
    best_state = copy.deepcopy(model.state_dict())
    epoch = 0
    while best_val < 1.0 and epoch < model_spec.epochs:
        loss = fit_epoch(model, data, optimizer, model_spec.batch_size, generator)
        epoch += 1
        val = accuracy(model, data.val_x, data.val_y)
        logger.debug(f"Epoch {epoch}: loss={loss:.4f} validation accuracy={val:.4f}")
        if val > best_val:
            best_val = val
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    test = accuracy(model, data.test_x, data.test_y)
    if test < model_spec.target_accuracy:
        logger.error(f"Toy model reached test accuracy {test:.4f} (validation {best_val:.4f}) after {epoch} epochs")
        raise TrainingError(test, model_spec.target_accuracy, epoch)
    logger.info(f"Toy model reached test accuracy {test:.4f} (validation {best_val:.4f}) after {epoch} epochs")
    return model


def clone(model: ToyModel) -> ToyModel:
    """Deep copy of a model, including its specs."""
    return copy.deepcopy(model)
