"""
Tests for the transformer workload model.
"""

import pytest

from oen_npu.atoms.shared.data_types import AttentionConvention
from oen_npu.atoms.shared.presets import workload_preset
from oen_npu.atoms.workload.transformer import (
    TransformerDims,
    attention_pattern_ops,
    total_mac_ops,
    total_mac_ops_general,
    total_ops_with_attention,
    weight_count,
    workload_plan,
)

GPT3 = workload_preset("gpt3")


def test_gpt3_task_count():
    """Test the GPT-3 operation count against the 712 TO table value."""
    ops = total_mac_ops(GPT3)
    assert ops == pytest.approx(7.125e14, rel=0.005)
    assert ops == 2 * (4 * 12288 ** 2 + 2 * 49152 * 12288) * 2048 * 96


def test_unit_dims():
    """Test the smallest workload: 2*(4+2)*1*1 = 12 ops."""
    assert total_mac_ops(workload_preset("unit")) == 12


def test_zero_layers_counts_nothing():
    """Test that L = 0 is an invalid workload for the count."""
    dims = GPT3.model_copy(update={"layers": 0})
    assert dims.violations() == [("workload.layers", "must be >= 1")]
    with pytest.raises(ValueError):
        total_mac_ops(dims)


def test_general_form_matches_closed_form():
    """Test that the four-term form equals the closed form when S*H == N."""
    assert total_mac_ops_general(GPT3) == total_mac_ops(GPT3)


def test_closed_form_requires_heads_span_embedding():
    """Test that S*H != N is rejected by the closed form but not the general one."""
    dims = TransformerDims(tokens=4, layers=2, heads=2, head_dim=3, embed_dim=8, ff_dim=16)
    assert not dims.heads_span_embedding
    with pytest.raises(ValueError, match="S\\*H == N"):
        total_mac_ops(dims)
    expected = 2 * (3 * 6 * 8 + 8 * 6 + 16 * 8 + 8 * 16) * 4 * 2
    assert total_mac_ops_general(dims) == expected


def test_plan_covers_total():
    """Test that the plan's VMMs add up to the operation count."""
    plan = workload_plan(GPT3)
    assert [s.name for s in plan.shapes] == ["W_QKV", "W_output", "W_up", "W_down"]
    assert plan.shapes[0].out_dim == 3 * 12288
    assert plan.shapes[3].in_dim == 49152
    assert all(s.batch == 2048 for s in plan.shapes)
    assert plan.total_ops() == total_mac_ops(GPT3)


def test_weight_count_gpt3():
    """Test the weight footprint used by the memory budget."""
    assert weight_count(GPT3) == 96 * (4 * 12288 ** 2 + 2 * 49152 * 12288)
    assert weight_count(GPT3) == pytest.approx(1.7395e11, rel=1e-4)


def test_attention_pattern_ops():
    """Test both attention counting conventions."""
    t, s, h, l = 2048, 128, 96, 96
    full = attention_pattern_ops(GPT3, AttentionConvention.FULL)
    assert full == 2 * (t * s * t + t * t * s) * h * l
    assert full == 4 * t * t * s * h * l
    assert full == pytest.approx(19.8e12, rel=0.01)
    assert attention_pattern_ops(GPT3, AttentionConvention.LAST_TOKEN) == 2 * (t * s + s * t) * h * l


def test_total_ops_with_attention():
    """Test the combined count, roughly 733 TO for GPT-3."""
    assert total_ops_with_attention(GPT3) == pytest.approx(733e12, rel=0.005)


def test_dims_are_immutable():
    """Test that dims reject mutation and unknown fields."""
    with pytest.raises(Exception):
        GPT3.tokens = 1
    with pytest.raises(Exception):
        TransformerDims(tokens=1, layers=1, heads=1, head_dim=1, embed_dim=1, ff_dim=1, vocab=10)
