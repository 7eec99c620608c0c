"""
Named presets for hardware and workload configurations.
"""

import logging
from typing import Dict, List

from ..workload.transformer import TransformerDims
from .config import ClockingParams, HardwareConfig, ProjectConfig

logger = logging.getLogger(__name__)

PROVENANCE = (
    "table1: 2048x3072 pixels, 10 um pitch, 2 GHz, r=2, b=8. e_dm_j, the idac_1m "
    "coefficients and a_dac_um2 are back-solved from the published power efficiency "
    "(74 TOPS/W) and area (654 mm^2); they are calibration values, not measurements."
)


def _table1() -> HardwareConfig:
    return HardwareConfig()


def _budget() -> HardwareConfig:
    # the memory/timing budget figures assume a 1 GHz DAC clock
    return HardwareConfig(clocking=ClockingParams(f_clk_hz=1e9))


HARDWARE_PRESETS = {
    "table1": _table1,
    "budget": _budget,
}

WORKLOAD_PRESETS: Dict[str, TransformerDims] = {
    "gpt3": TransformerDims(tokens=2048, layers=96, heads=96, head_dim=128, embed_dim=12288, ff_dim=49152),
    "unit": TransformerDims(tokens=1, layers=1, heads=1, head_dim=1, embed_dim=1, ff_dim=1),
}


def list_presets() -> Dict[str, List[str]]:
    """Names of the shipped presets by kind."""
    return {"hardware": sorted(HARDWARE_PRESETS), "workload": sorted(WORKLOAD_PRESETS)}


def hardware_preset(name: str) -> HardwareConfig:
    """
    Get a hardware preset by name.

    Args:
        name: "table1" or "budget"

    Returns:
        HardwareConfig
    """
    if name not in HARDWARE_PRESETS:
        raise ValueError(f"Unknown hardware preset: {name} (available: {sorted(HARDWARE_PRESETS)})")
    return HARDWARE_PRESETS[name]()


def workload_preset(name: str) -> TransformerDims:
    """
    Get a workload preset by name.

    Args:
        name: "gpt3" or "unit"

    Returns:
        TransformerDims
    """
    if name not in WORKLOAD_PRESETS:
        raise ValueError(f"Unknown workload preset: {name} (available: {sorted(WORKLOAD_PRESETS)})")
    return WORKLOAD_PRESETS[name]


def project_preset(hardware: str = "table1", workload: str = "gpt3") -> ProjectConfig:
    """
    Build a full project config from named presets.

    Args:
        hardware: Hardware preset name
        workload: Workload preset name

    Returns:
        ProjectConfig
    """
    return ProjectConfig(
        provenance=PROVENANCE,
        hardware=hardware_preset(hardware),
        workload=workload_preset(workload),
    )
