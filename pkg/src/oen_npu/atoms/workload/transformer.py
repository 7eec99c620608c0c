"""
Transformer workload model: dimensions, VMM shapes and operation counts.

All counts use Python integers, so they are exact for any field size.
"""

import logging
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..shared.data_types import AttentionConvention

logger = logging.getLogger(__name__)


class TransformerDims(BaseModel):
    """
    Workload shape of a decoder-only transformer.

    T tokens, L layers, H heads of size S, embedding width N, feed-forward width M.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    tokens: int = Field(..., description="T: number of tokens in the context")
    layers: int = Field(..., description="L: number of transformer layers")
    heads: int = Field(..., description="H: attention heads per layer")
    head_dim: int = Field(..., description="S: key/query/value dimension per head")
    embed_dim: int = Field(..., description="N: word-embedding (model) dimension")
    ff_dim: int = Field(..., description="M: feed-forward hidden dimension")

    def violations(self) -> List[Tuple[str, str]]:
        """
        Check the field invariants.

        Returns:
            List of (field, rule) pairs; empty when valid
        """
        problems = []
        for name in ("tokens", "layers", "heads", "head_dim", "embed_dim", "ff_dim"):
            if getattr(self, name) < 1:
                problems.append((f"workload.{name}", "must be >= 1"))
        return problems

    @property
    def heads_span_embedding(self) -> bool:
        """True when S*H == N, the condition for the simplified closed forms."""
        return self.head_dim * self.heads == self.embed_dim


class VmmShape(BaseModel):
    """One weight matrix applied to a batch of input vectors."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    out_dim: int
    in_dim: int
    batch: int

    @property
    def macs(self) -> int:
        return self.out_dim * self.in_dim * self.batch


class WorkloadPlan(BaseModel):
    """The four weight matmuls of one layer, repeated for every layer."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    shapes: Tuple[VmmShape, ...]
    layers: int

    def ops_per_layer(self) -> int:
        return sum(2 * shape.macs for shape in self.shapes)

    def total_ops(self) -> int:
        return self.ops_per_layer() * self.layers


def _require_valid(dims: TransformerDims) -> None:
    problems = dims.violations()
    if problems:
        raise ValueError(f"Invalid transformer dims: {problems}")


def workload_plan(dims: TransformerDims) -> WorkloadPlan:
    """
    Build the per-layer VMM plan: W_QKV, W_output, W_up and W_down, each applied to T tokens.

    Args:
        dims: Transformer dimensions

    Returns:
        WorkloadPlan with the four shapes and L layers
    """
    sh = dims.head_dim * dims.heads
    n, m, t = dims.embed_dim, dims.ff_dim, dims.tokens
    shapes = (
        VmmShape(name="W_QKV", out_dim=3 * sh, in_dim=n, batch=t),
        VmmShape(name="W_output", out_dim=n, in_dim=sh, batch=t),
        VmmShape(name="W_up", out_dim=m, in_dim=n, batch=t),
        VmmShape(name="W_down", out_dim=n, in_dim=m, batch=t),
    )
    return WorkloadPlan(shapes=shapes, layers=dims.layers)


def weight_count(dims: TransformerDims) -> int:
    """
    Total number of weights in the four weight matrices of all layers.

    Args:
        dims: Transformer dimensions

    Returns:
        L * (3*S*H*N + N*S*H + M*N + N*M)
    """
    sh = dims.head_dim * dims.heads
    n, m = dims.embed_dim, dims.ff_dim
    return dims.layers * (3 * sh * n + n * sh + m * n + n * m)


def total_mac_ops_general(dims: TransformerDims) -> int:
    """
    Operation count in the four-term form, valid for any S*H.

    Args:
        dims: Transformer dimensions

    Returns:
        2 * ((3*S*H*N + N*S*H) + (M*N + N*M)) * T * L
    """
    _require_valid(dims)
    return 2 * weight_count(dims) * dims.tokens


def total_mac_ops(dims: TransformerDims) -> int:
    """
    Overall system operation tasks, 2*(4N^2 + 2MN)*T*L.

    Args:
        dims: Transformer dimensions with S*H == N

    Returns:
        Number of operations (one MAC counts as two operations)

    Raises:
        ValueError: If dims are invalid or S*H != N
    """
    _require_valid(dims)
    if not dims.heads_span_embedding:
        raise ValueError(
            f"Closed form requires S*H == N, got S*H={dims.head_dim * dims.heads}, N={dims.embed_dim}; "
            "use total_mac_ops_general"
        )
    n, m = dims.embed_dim, dims.ff_dim
    return 2 * (4 * n * n + 2 * m * n) * dims.tokens * dims.layers


def attention_pattern_ops(
    dims: TransformerDims, convention: AttentionConvention = AttentionConvention.FULL
) -> int:
    """
    Operations spent forming K^T Q and V K^T Q. Counted for information only; these
    matmuls are never scheduled on the pixel array.

    Args:
        dims: Transformer dimensions
        convention: FULL counts the whole T x T pattern, 2*(T*S*T + T*T*S)*H*L.
            LAST_TOKEN counts one new query column, 2*(T*S + S*T)*H*L.

    Returns:
        Number of operations
    """
    _require_valid(dims)
    t, s = dims.tokens, dims.head_dim
    if convention == AttentionConvention.FULL:
        macs = t * s * t + s * t * t
    elif convention == AttentionConvention.LAST_TOKEN:
        macs = t * s + s * t
    else:
        raise ValueError(f"Unknown attention convention: {convention}")
    return 2 * macs * dims.heads * dims.layers


def total_ops_with_attention(dims: TransformerDims) -> int:
    """Weight-matmul operations plus the full attention pattern."""
    return total_mac_ops_general(dims) + attention_pattern_ops(dims, AttentionConvention.FULL)
