"""
Data types, enums and exceptions for oen-npu.
"""

from enum import Enum
from typing import List, Optional, Sequence, Tuple


class SequenceMode(Enum):
    """
    Processing sequences of the two-tap demodulator pixel with their sub-cycle counts.
    """
    UNIPOLAR_SINGLE = (1, "unipolar_single")
    BIPOLAR_COMPLEMENTARY = (2, "bipolar_complementary")
    SYMMETRIZED_BIPOLAR = (4, "symmetrized_bipolar")

    def __init__(self, subcycles, full_name):
        self.subcycles = subcycles
        self.full_name = full_name

    @classmethod
    def from_subcycles(cls, r: int) -> "SequenceMode":
        """
        Get the sequence mode for a sub-cycle count.

        Args:
            r: Number of sub-cycles (1, 2 or 4)

        Returns:
            SequenceMode: The matching mode

        Raises:
            ValueError: If r is not a supported sub-cycle count
        """
        for mode in cls:
            if mode.subcycles == r:
                return mode
        raise ValueError(f"Unsupported sub-cycle count r={r}; expected one of 1, 2, 4")

    @classmethod
    def from_name(cls, name: str) -> Optional["SequenceMode"]:
        """
        Get the sequence mode from its full name or sub-cycle count as text.

        Args:
            name: e.g. "bipolar_complementary" or "2"

        Returns:
            SequenceMode, or None if not found
        """
        for mode in cls:
            if mode.full_name == name or str(mode.subcycles) == name:
                return mode
        return None


class DacKind(str, Enum):
    """DAC architectures: R-2R ladder and current steering."""
    RDAC = "rdac"
    IDAC = "idac"


class Fidelity(str, Enum):
    """Execution fidelity of the matrix engine."""
    EXACT = "exact"
    QUANTIZED = "quantized"
    FULL_NOISE = "full_noise"


class AttentionConvention(str, Enum):
    """Counting convention for the attention-pattern matmuls (K^T Q and V K^T Q)."""
    FULL = "full"
    LAST_TOKEN = "last_token"


class SnrRegime(str, Enum):
    """Dark-current regime of the minimal pulse-energy bound."""
    DARK_NEGLIGIBLE = "dark_negligible"
    DARK_DOMINATED = "dark_dominated"
    CROSSOVER = "crossover"


class PowerForm(str, Enum):
    """Full system-power expression or its N >> 1 approximation."""
    FULL = "full"
    APPROX = "approx"


class Granularity(str, Enum):
    """Scale granularity for absmax quantization."""
    PER_TENSOR = "per_tensor"
    PER_VECTOR = "per_vector"


class NoiseScope(str, Enum):
    """Which matmul operands receive multiplicative device noise."""
    WEIGHTS = "weights"
    ACTIVATIONS = "activations"
    BOTH = "both"


class NoiseMode(str, Enum):
    """Whether device noise is redrawn per matmul call or frozen per device position."""
    PER_CALL = "per_call"
    FROZEN_PER_DEVICE = "frozen_per_device"


class MatmulRoute(str, Enum):
    """Gaussian proxy noise or the physics-derived path through the matrix engine."""
    GAUSSIAN = "gaussian"
    ENGINE = "engine"


class NpuError(Exception):
    """Base class for oen-npu errors."""


class ConfigError(NpuError, ValueError):
    """Raised when a configuration file or override cannot be parsed."""


class OutOfRangeError(NpuError, ValueError):
    """
    Raised when matrix entries fall outside the encodable range [-1, 1].

    Attributes:
        indices: Offending (row, col) index pairs (truncated to the first 20)
    """

    def __init__(self, message: str, indices: Sequence[Tuple[int, ...]]):
        self.indices: List[Tuple[int, ...]] = [tuple(int(i) for i in idx) for idx in indices][:20]
        super().__init__(f"{message}; offending indices (first {len(self.indices)}): {self.indices}")


class BudgetExceededError(NpuError):
    """
    Raised when a full-noise run would exceed the pixel-trial budget.

    Attributes:
        required: Pixel-trials the run would need
        budget: Configured budget
    """

    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(
            f"Refusing full_noise run: {required} pixel-trials required, budget is {budget}"
        )


class TrainingError(NpuError):
    """
    Raised when training fails to reach the required accuracy.

    Attributes:
        accuracy: Test accuracy of the selected checkpoint
        target: Required accuracy
    """

    def __init__(self, accuracy: float, target: float, epochs: int):
        self.accuracy = accuracy
        self.target = target
        super().__init__(
            f"Training reached accuracy {accuracy:.4f} after {epochs} epochs; required {target:.4f}"
        )
