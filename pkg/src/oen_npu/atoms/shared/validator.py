"""
Validation utilities for oen-npu configurations.

Violations are returned as data, never raised.
"""

import logging
import math
from typing import List, NamedTuple

from .config import HardwareConfig, ProjectConfig
from .data_types import DacKind
from .utils import photon_energy_j

logger = logging.getLogger(__name__)

# relative tolerance for photon energy vs. wavelength consistency
PHOTON_ENERGY_RTOL = 1e-3


class Violation(NamedTuple):
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def _in_unit_interval(value: float) -> bool:
    return 0.0 < value <= 1.0


def validate(config: HardwareConfig) -> List[Violation]:
    """
    Check every hardware invariant.

    Args:
        config: Hardware configuration

    Returns:
        List of violations, empty iff the configuration is valid
    """
    problems: List[Violation] = []
    geo = config.geometry
    if geo.rows < 1:
        problems.append(Violation("geometry.rows", "C_T must be >= 1"))
    if geo.cols < 1:
        problems.append(Violation("geometry.cols", "C_W must be >= 1"))
    if not geo.pixel_pitch_um > 0:
        problems.append(Violation("geometry.pixel_pitch_um", "must be > 0"))
    if min(geo.adc_block) < 1 or min(geo.adc_array) < 1:
        problems.append(Violation("geometry.adc_block/adc_array", "ADC counts must be >= 1"))
    elif geo.num_adcs * geo.pixels_per_adc < geo.rows * geo.cols:
        problems.append(Violation(
            "geometry.adc_array",
            f"ADC coverage {geo.num_adcs * geo.pixels_per_adc} < {geo.rows * geo.cols} pixels",
        ))

    clk = config.clocking
    if not clk.f_clk_hz > 0:
        problems.append(Violation("clocking.f_clk_hz", "must be > 0"))
    if clk.r_subcycles not in (1, 2, 4):
        problems.append(Violation("clocking.r_subcycles", "must be one of 1, 2, 4"))
    if not clk.adc_sample_rate_hz > 0:
        problems.append(Violation("clocking.adc_sample_rate_hz", "must be > 0"))
    if clk.adc_bits < 1:
        problems.append(Violation("clocking.adc_bits", "must be >= 1"))
    if clk.dac_bits < 1:
        problems.append(Violation("clocking.dac_bits", "must be >= 1"))

    opt = config.optics
    if opt.wavelength_nm is None and opt.photon_energy_j is None:
        problems.append(Violation("optics.wavelength_nm", "wavelength_nm or photon_energy_j is required"))
    if opt.wavelength_nm is not None and not opt.wavelength_nm > 0:
        problems.append(Violation("optics.wavelength_nm", "must be > 0"))
    if opt.photon_energy_j is not None and not opt.photon_energy_j > 0:
        problems.append(Violation("optics.photon_energy_j", "must be > 0"))
    if (
        opt.wavelength_nm is not None and opt.wavelength_nm > 0
        and opt.photon_energy_j is not None and opt.photon_energy_j > 0
    ):
        expected = photon_energy_j(opt.wavelength_nm)
        if not math.isclose(opt.photon_energy_j, expected, rel_tol=PHOTON_ENERGY_RTOL):
            problems.append(Violation(
                "optics.photon_energy_j", f"inconsistent with wavelength (hc/lambda = {expected:.4e} J)"
            ))
    for name in ("eta_dm", "eta_em", "alpha_em"):
        if not _in_unit_interval(getattr(opt, name)):
            problems.append(Violation(f"optics.{name}", "must be in (0, 1]"))
    if opt.i_dark_a < 0:
        problems.append(Violation("optics.i_dark_a", "must be >= 0"))
    for name in ("tap_gain_plus", "tap_gain_minus", "full_well_e", "c_pix_f"):
        if not getattr(opt, name) > 0:
            problems.append(Violation(f"optics.{name}", "must be > 0"))

    en = config.energy
    for name in ("e_read_j", "e_write_j", "e_dm_j", "e_adc_j"):
        if getattr(en, name) < 0:
            problems.append(Violation(f"energy.{name}", "must be >= 0"))
    if not en.idac_opt_factor > 0:
        problems.append(Violation("energy.idac_opt_factor", "must be > 0"))
    if en.dac_model not in config.dac:
        problems.append(Violation("energy.dac_model", f"{en.dac_model!r} is not a key of hardware.dac"))

    if config.area.a_dac_um2 < 0:
        problems.append(Violation("area.a_dac_um2", "must be >= 0"))
    if config.area.a_other_mm2 < 0:
        problems.append(Violation("area.a_other_mm2", "must be >= 0"))

    hbm = config.hbm
    if hbm.chips < 0:
        problems.append(Violation("hbm.chips", "must be >= 0"))
    for name in ("capacity_per_chip_bytes", "rate_per_chip_bytes_s", "energy_per_bit_j"):
        if getattr(hbm, name) < 0:
            problems.append(Violation(f"hbm.{name}", "must be >= 0"))

    for key, model in config.dac.items():
        prefix = f"dac.{key}"
        for name in ("e_fixed_j", "e_per_pixel_j", "a_fixed_um2", "a_per_pixel_um2"):
            if getattr(model, name) < 0:
                problems.append(Violation(f"{prefix}.{name}", "must be >= 0"))
        if model.kind == DacKind.IDAC and model.a_per_pixel_um2 != 0:
            problems.append(Violation(f"{prefix}.a_per_pixel_um2", "IDAC area must not scale with pixels"))
        if model.kind == DacKind.RDAC and model.e_fixed_j != 0:
            problems.append(Violation(f"{prefix}.e_fixed_j", "RDAC has no fixed bias energy"))
        if not model.load_impedance_ohm > 0:
            problems.append(Violation(f"{prefix}.load_impedance_ohm", "must be > 0"))

    if config.cooling_threshold_w_mm2 is not None and not config.cooling_threshold_w_mm2 > 0:
        problems.append(Violation("cooling_threshold_w_mm2", "must be > 0 when set"))

    for problem in problems:
        logger.debug(f"Config violation: {problem}")
    return problems


def validate_project(config: ProjectConfig) -> List[Violation]:
    """
    Check the hardware invariants plus the workload, quantization and noise sections.

    Args:
        config: Project configuration

    Returns:
        List of violations
    """
    problems = validate(config.hardware)
    problems.extend(Violation(field, rule) for field, rule in config.workload.violations())
    q = config.quant
    if q.bits is not None and not 2 <= q.bits <= 16:
        problems.append(Violation("quant.bits", "must be in [2, 16] or null"))
    if not q.outlier_threshold > 0:
        problems.append(Violation("quant.outlier_threshold", "must be > 0"))
    if not 0.0 <= config.noise.sigma < 1.0:
        problems.append(Violation("noise.sigma", "must be in [0, 1)"))
    sim = config.simulation
    if sim.read_noise_e < 0 or sim.adc_noise_lsb < 0:
        problems.append(Violation("simulation", "noise magnitudes must be >= 0"))
    if not 0 < sim.adc_range_scale <= 1:
        problems.append(Violation("simulation.adc_range_scale", "must be in (0, 1]"))
    if sim.drive_energy_j is not None and sim.drive_energy_j < 0:
        problems.append(Violation("simulation.drive_energy_j", "must be >= 0"))
    if sim.max_pixel_trials < 1:
        problems.append(Violation("simulation.max_pixel_trials", "must be >= 1"))
    return problems
