"""
Tests for the toy transformer and its dataset.
"""

from unittest.mock import patch

import pytest
import torch

from oen_npu.atoms.shared.config import DatasetSpec, ModelSpec
from oen_npu.atoms.shared.data_types import TrainingError
from oen_npu.molecules.toy_model import (
    DTYPE,
    ToyModel,
    accuracy,
    clone,
    make_dataset,
    train_toy,
)

DATASET = DatasetSpec(classes=3, samples_per_class=40, seq_len=4, feature_dim=6)
MODEL = ModelSpec(embed_dim=16, heads=2, layers=1, epochs=40, target_accuracy=0.9)


class RecordingContext:
    """Matmul context that records keys and computes the clean product."""

    def __init__(self):
        self.keys = []

    def matmul(self, x, w, key):
        self.keys.append(key)
        return torch.matmul(x, w.transpose(-1, -2))


def test_make_dataset_split():
    """Test shapes, stratification and reproducibility of the dataset."""
    data = make_dataset(DATASET, seed=1)
    assert data.train_x.shape == (3 * 25, 4, 6)
    assert data.val_x.shape == (3 * 5, 4, 6)
    assert data.test_x.shape == (3 * 10, 4, 6)
    assert data.train_x.dtype == DTYPE
    assert torch.bincount(data.test_y).tolist() == [10, 10, 10]
    assert torch.bincount(data.val_y).tolist() == [5, 5, 5]
    again = make_dataset(DATASET, seed=1)
    assert torch.equal(data.train_x, again.train_x)
    assert not torch.equal(data.train_x, make_dataset(DATASET, seed=2).train_x)


@pytest.mark.parametrize("samples", [1, 2])
def test_make_dataset_rejects_tiny_specs(samples):
    """Test that every class keeps a training sample after the test and validation splits."""
    with pytest.raises(ValueError):
        make_dataset(DatasetSpec(samples_per_class=samples), seed=0)


def test_every_matmul_goes_through_the_context():
    """Test that the forward pass routes all products, attention included."""
    model = ToyModel(DATASET, MODEL.model_copy(update={"layers": 2}))
    ctx = RecordingContext()
    x = make_dataset(DATASET, seed=0).test_x[:5]
    logits = model(x, ctx)
    assert logits.shape == (5, 3)
    assert ctx.keys == [
        "embed",
        "block0.qkv", "block0.scores", "block0.mix", "block0.proj", "block0.ff1", "block0.ff2",
        "block1.qkv", "block1.scores", "block1.mix", "block1.proj", "block1.ff1", "block1.ff2",
        "head",
    ]
    torch.testing.assert_close(logits, model(x))


def test_heads_must_divide_embedding():
    """Test the head-count check."""
    with pytest.raises(ValueError):
        ToyModel(DATASET, MODEL.model_copy(update={"embed_dim": 15}))


def test_train_reaches_target_and_is_reproducible():
    """Test that training reaches the target and repeats bit for bit."""
    model = train_toy(DATASET, MODEL, seed=3)
    data = make_dataset(DATASET, seed=3)
    assert accuracy(model, data.test_x, data.test_y) >= 0.9
    again = train_toy(DATASET, MODEL, seed=3)
    for a, b in zip(model.parameters(), again.parameters()):
        assert torch.equal(a, b)


def test_train_raises_when_target_unreachable():
    """Test that missing the target accuracy is an error."""
    spec = MODEL.model_copy(update={"epochs": 1, "target_accuracy": 1.01})
    with pytest.raises(TrainingError) as excinfo:
        train_toy(DATASET, spec, seed=0)
    assert excinfo.value.target == 1.01


def test_clone_is_independent():
    """Test that a clone shares no parameters with the original."""
    model = ToyModel(DATASET, MODEL)
    copy = clone(model)
    with torch.no_grad():
        copy.head.bias.add_(1.0)
    assert not torch.equal(copy.head.bias, model.head.bias)
    assert copy.dataset_spec == model.dataset_spec


def test_training_selects_on_validation_only():
    """Test that the test split is scored exactly once, after selection."""
    with patch("oen_npu.molecules.toy_model.accuracy", wraps=accuracy) as spy:
        train_toy(DATASET, MODEL, seed=3)
    scored = [call.args[1].shape[0] for call in spy.call_args_list]
    assert scored[:-1] == [3 * 5] * (len(scored) - 1)
    assert scored[-1] == 3 * 10


def test_single_class_is_trivially_perfect():
    """Test that a one-class dataset scores 1.0 without training."""
    spec = DatasetSpec(classes=1, samples_per_class=40, seq_len=4, feature_dim=6)
    model = train_toy(spec, MODEL, seed=0)
    data = make_dataset(spec, seed=0)
    assert accuracy(model, data.test_x, data.test_y) == 1.0


def test_default_specs_reach_baseline():
    """Test that the default dataset and model train to 0.95 on the test split."""
    model = train_toy(DatasetSpec(), ModelSpec(), seed=0)
    assert (model.model_spec.embed_dim, model.model_spec.heads, model.model_spec.layers) == (32, 2, 2)
    data = make_dataset(DatasetSpec(), seed=0)
    assert accuracy(model, data.test_x, data.test_y) >= 0.95
