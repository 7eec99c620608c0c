"""
Utility functions and physical constants for oen-npu.
"""

import logging
import os
from typing import Optional

import numpy as np
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Load environment variables
load_dotenv()

# Exact SI constants
ELECTRON_CHARGE_C = 1.602176634e-19
PLANCK_J_S = 6.62607015e-34
SPEED_OF_LIGHT_M_S = 299792458.0

CONFIG_ENV_VAR = "OEN_NPU_CONFIG"
LOG_LEVEL_ENV_VAR = "OEN_NPU_LOG_LEVEL"

DEFAULT_HARDWARE_PRESET = "table1"
DEFAULT_WORKLOAD_PRESET = "gpt3"

TERA = 1e12


def photon_energy_j(wavelength_nm: float) -> float:
    """
    Photon energy hc/lambda.

    Args:
        wavelength_nm: Wavelength in nanometres

    Returns:
        Photon energy in joules
    """
    if wavelength_nm <= 0:
        raise ValueError(f"wavelength_nm must be > 0, got {wavelength_nm}")
    return PLANCK_J_S * SPEED_OF_LIGHT_M_S / (wavelength_nm * 1e-9)


def ceil_div(a: int, b: int) -> int:
    """Integer ceiling division for non-negative a and positive b."""
    if b <= 0:
        raise ValueError(f"divisor must be > 0, got {b}")
    return -(-int(a) // int(b))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Build a counter-based random generator for one stream.

    Streams are split by SeedSequence spawn keys, so (seed, pixel, trial) always maps
    to the same stream regardless of which thread draws from it.

    Args:
        seed: Base seed
        *stream: Stream coordinates, e.g. pixel index and trial index

    Returns:
        numpy Generator for that stream
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)))


def derive_seed(seed: int, *stream: int) -> int:
    """
    Derive a 63-bit integer seed for a stream (for libraries that take plain integer seeds).

    Args:
        seed: Base seed
        *stream: Stream coordinates

    Returns:
        Non-negative integer seed
    """
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def get_default_config_path() -> Optional[str]:
    """
    Get the default config path from the environment.

    Returns:
        Path string or None if the variable is unset or empty
    """
    path = os.environ.get(CONFIG_ENV_VAR)
    if path is None or path.strip() == "":
        return None
    return path.strip()


def get_default_log_level() -> str:
    """Default log level from the environment, INFO when unset."""
    level = os.environ.get(LOG_LEVEL_ENV_VAR, "INFO").strip().upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        logger.warning(f"Ignoring invalid {LOG_LEVEL_ENV_VAR}={level!r}")
        return "INFO"
    return level
