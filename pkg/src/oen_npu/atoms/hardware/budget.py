"""
Secondary budget figures derived from a hardware configuration: memory capacity,
DAC/ADC aggregate data rates, ADC coverage and host transfer time.
"""

import logging

from pydantic import BaseModel, ConfigDict

from ..shared.config import HardwareConfig
from ..workload.transformer import TransformerDims, weight_count

logger = logging.getLogger(__name__)

# PCIe 5.0 per-lane signalling rate and line-code efficiency
PCIE5_GT_PER_S = 32e9
PCIE_ENCODING = 128.0 / 130.0


class MemoryBudget(BaseModel):
    model_config = ConfigDict(frozen=True)

    required_bytes: int
    available_bytes: float
    ok: bool


class IoRates(BaseModel):
    model_config = ConfigDict(frozen=True)

    dac_read_rate_bytes_s: float
    adc_write_rate_bytes_s: float
    hbm_rate_bytes_s: float
    ok: bool


class AdcCoverage(BaseModel):
    model_config = ConfigDict(frozen=True)

    covered_rows: int
    covered_cols: int
    covered_pixels: int
    required_pixels: int
    row_slack: int
    col_slack: int
    ok: bool


def pixel_area_um2(config: HardwareConfig) -> float:
    """Area of one demodulator pixel (pitch squared)."""
    return config.geometry.pixel_area_um2


def memory_budget(config: HardwareConfig, dims: TransformerDims, bytes_per_weight: int = 1) -> MemoryBudget:
    """
    Compare the weight footprint of a model with the attached HBM capacity.

    Args:
        config: Hardware configuration
        dims: Transformer dimensions
        bytes_per_weight: Storage size of one weight

    Returns:
        MemoryBudget with required and available bytes
    """
    if bytes_per_weight < 1:
        raise ValueError(f"bytes_per_weight must be >= 1, got {bytes_per_weight}")
    required = weight_count(dims) * bytes_per_weight
    available = config.hbm.chips * config.hbm.capacity_per_chip_bytes
    ok = required <= available
    if not ok:
        logger.warning(f"Weights need {required / 1e9:.1f} GB but HBM provides {available / 1e9:.1f} GB")
    return MemoryBudget(required_bytes=required, available_bytes=available, ok=ok)


def io_rates(config: HardwareConfig) -> IoRates:
    """
    Aggregate DAC read and ADC write rates against the HBM bandwidth.

    One DAC per row and per column reads a value every clock; every ADC writes one
    b-bit sample per conversion.

    Args:
        config: Hardware configuration

    Returns:
        IoRates in bytes per second
    """
    geo, clk = config.geometry, config.clocking
    dac_rate = (geo.rows + geo.cols) * clk.f_clk_hz * (clk.dac_bits / 8)
    adc_rate = geo.num_adcs * clk.adc_sample_rate_hz * (clk.adc_bits / 8)
    hbm_rate = config.hbm.chips * config.hbm.rate_per_chip_bytes_s
    ok = hbm_rate >= dac_rate and hbm_rate >= adc_rate
    return IoRates(
        dac_read_rate_bytes_s=dac_rate,
        adc_write_rate_bytes_s=adc_rate,
        hbm_rate_bytes_s=hbm_rate,
        ok=ok,
    )


def adc_coverage(config: HardwareConfig) -> AdcCoverage:
    """
    Check that the ADC array reaches every pixel.

    adc_block and adc_array are given as (along columns, along rows). The default
    154x512 array of 20x4 blocks spans 3080 columns for a 3072-column array, so an
    8-column slack is expected and is not an error.

    Args:
        config: Hardware configuration

    Returns:
        AdcCoverage
    """
    geo = config.geometry
    covered_cols = geo.adc_array[0] * geo.adc_block[0]
    covered_rows = geo.adc_array[1] * geo.adc_block[1]
    covered = geo.num_adcs * geo.pixels_per_adc
    required = geo.rows * geo.cols
    return AdcCoverage(
        covered_rows=covered_rows,
        covered_cols=covered_cols,
        covered_pixels=covered,
        required_pixels=required,
        row_slack=covered_rows - geo.rows,
        col_slack=covered_cols - geo.cols,
        ok=covered >= required,
    )


def embedding_transfer_time(
    num_bytes: float = 25e6, lanes: int = 16, gt_per_s: float = PCIE5_GT_PER_S
) -> float:
    """
    Host-to-chiplet transfer latency for post-embedding token vectors.

    Informational only; never added to the system delay.

    Args:
        num_bytes: Payload size, 25 MB for 2048 tokens of a 12288-wide FP8 embedding
        lanes: PCIe lane count
        gt_per_s: Per-lane transfer rate

    Returns:
        Transfer time in seconds
    """
    if lanes < 1 or gt_per_s <= 0:
        raise ValueError(f"lanes must be >= 1 and gt_per_s > 0, got {lanes}, {gt_per_s}")
    bytes_per_s = lanes * gt_per_s * PCIE_ENCODING / 8
    return num_bytes / bytes_per_s
