"""
Affine energy and area models for the R-2R (RDAC) and current-steering (IDAC) DACs
as functions of the number of pixels driven in parallel.
"""

import logging
import math
from typing import Dict, Iterable, List, Optional

from ..shared.config import DacModel, HardwareConfig
from ..shared.data_types import DacKind

logger = logging.getLogger(__name__)


def _check_pixels(n_pixels: int) -> None:
    if n_pixels < 1:
        raise ValueError(f"n_pixels must be >= 1, got {n_pixels}")


def dac_energy_total(model: DacModel, n_pixels: int) -> float:
    """
    Energy per update of one DAC driving n_pixels.

    RDAC energy is purely proportional to the load; IDAC adds a bias-circuit floor.

    Args:
        model: DAC model
        n_pixels: Pixels driven in parallel

    Returns:
        Energy in joules
    """
    _check_pixels(n_pixels)
    if model.kind == DacKind.RDAC:
        return model.e_per_pixel_j * n_pixels
    return model.e_fixed_j + model.e_per_pixel_j * n_pixels


def dac_energy_per_pixel(model: DacModel, n_pixels: int) -> float:
    """Energy per update per driven pixel."""
    return dac_energy_total(model, n_pixels) / n_pixels


def dac_area(model: DacModel, n_pixels: int) -> float:
    """
    Layout area of one DAC sized for n_pixels.

    Args:
        model: DAC model
        n_pixels: Pixels driven in parallel

    Returns:
        Area in um^2 (constant for IDAC, affine for RDAC)
    """
    _check_pixels(n_pixels)
    if model.kind == DacKind.IDAC:
        return model.a_fixed_um2
    return model.a_fixed_um2 + model.a_per_pixel_um2 * n_pixels


def effective_edac_dm(config: HardwareConfig) -> float:
    """
    E_DAC|DM: energy of the column DAC that drives the C_T demodulator gates.

    For an IDAC the total is divided by idac_opt_factor, the array-specific
    optimisation of the current-steering design. An RDAC gets no such reduction.

    Args:
        config: Hardware configuration

    Returns:
        Energy per update in joules
    """
    model = config.selected_dac()
    total = dac_energy_total(model, config.geometry.rows)
    if model.kind == DacKind.RDAC:
        logger.warning(
            f"DAC model {config.energy.dac_model!r} is an RDAC; the demodulator DAC is normally an IDAC"
        )
        return total
    return total / config.energy.idac_opt_factor


def crossover_pixels(rdac: DacModel, idac: DacModel) -> Optional[int]:
    """
    Smallest pixel count at which the IDAC uses strictly less energy than the RDAC.

    Args:
        rdac: RDAC model
        idac: IDAC model

    Returns:
        n*, or None when the IDAC never wins
    """
    slope_gap = rdac.e_per_pixel_j - idac.e_per_pixel_j
    if dac_energy_total(idac, 1) < dac_energy_total(rdac, 1):
        return 1
    if slope_gap <= 0:
        return None
    n_star = math.floor(idac.e_fixed_j / slope_gap) + 1
    # guard against rounding at the exact boundary
    while dac_energy_total(idac, n_star) >= dac_energy_total(rdac, n_star):
        n_star += 1
    return n_star


def scaling_table(models: Dict[str, DacModel], n_values: Iterable[int]) -> List[Dict[str, object]]:
    """
    Rows of (model, n, total energy, per-pixel energy, area) for every model and load.

    Args:
        models: DAC models by name
        n_values: Pixel counts to evaluate

    Returns:
        List of row dictionaries, ordered by model name then n
    """
    n_list = list(n_values)
    rows = []
    for name in sorted(models):
        model = models[name]
        for n in n_list:
            rows.append({
                "model": name,
                "kind": model.kind.value,
                "load_impedance_ohm": model.load_impedance_ohm,
                "n_pixels": n,
                "total_energy_j": dac_energy_total(model, n),
                "per_pixel_energy_j": dac_energy_per_pixel(model, n),
                "area_um2": dac_area(model, n),
            })
    return rows
