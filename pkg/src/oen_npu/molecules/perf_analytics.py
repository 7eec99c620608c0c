"""
Closed-form system model of the NPU: delay, speed, power, area, efficiencies and
power handling, plus design-space sweeps and the table1 comparison.
"""

import concurrent.futures
import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..atoms.hardware.budget import embedding_transfer_time
from ..atoms.hardware.dac import effective_edac_dm
from ..atoms.hardware.snr import min_pulse_energy
from ..atoms.shared.config import HardwareConfig
from ..atoms.shared.data_types import PowerForm
from ..atoms.shared.utils import TERA, ceil_div
from ..atoms.workload.transformer import (
    TransformerDims,
    total_mac_ops,
    total_mac_ops_general,
    workload_plan,
)

logger = logging.getLogger(__name__)

UM2_PER_MM2 = 1e6

# Nvidia T4 reference row of the comparison table (hard-coded, per single card)
T4_TASKS_TO = 712.0
T4_SPEED_TOPS = 130.0
T4_DELAY_MS = 5477.0
T4_POWER_W = 406.25
T4_EFF_TOPS_W = 0.32
T4_AREA_MM2 = 541.66
T4_EFF_TOPS_MM2 = 0.24
T4_HANDLING_MW_MM2 = 750.0

TABLE1_TARGET_EFF_OPS_S_W = 74e12
TABLE1_TARGET_AREA_MM2 = 654.0

SWEEP_COLUMNS = [
    "C_T", "C_W", "tasks_ops", "speed_ops_s", "delay_s", "power_w", "eff_ops_s_w",
    "area_mm2", "eff_ops_s_mm2", "handling_w_mm2",
]


class PowerResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    power_w: float
    breakdown: Dict[str, float] = Field(..., description="Contribution of each energy term, W")
    form: PowerForm


class PerfReport(BaseModel):
    """All derived metrics for one (workload, hardware) point."""
    model_config = ConfigDict(frozen=True)

    rows: int
    cols: int
    tasks_ops: int
    delay_s: float
    speed_ops_s: float
    power_w: float
    eff_ops_s_w: float
    area_mm2: float
    eff_ops_s_mm2: float
    handling_w_mm2: float
    repeats: Dict[str, int]
    breakdown: Dict[str, float]
    power_form: PowerForm
    idle_rows: int = 0
    embedding_transfer_s: float = 0.0
    cooling_ok: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def sweep_row(self) -> List[Any]:
        return [
            self.rows, self.cols, self.tasks_ops, self.speed_ops_s, self.delay_s, self.power_w,
            self.eff_ops_s_w, self.area_mm2, self.eff_ops_s_mm2, self.handling_w_mm2,
        ]


class Calibration(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: HardwareConfig
    derivation: Dict[str, Any]


def repeat_counts(dims: TransformerDims, config: HardwareConfig) -> Dict[str, int]:
    """
    Temporal repeats: R_T = ceil(T/C_T) and R_W = ceil(out_dim/C_W) for each matrix.

    Returns:
        {"R_T": ..., "R_W:W_QKV": ..., ...}
    """
    geo = config.geometry
    counts = {"R_T": ceil_div(dims.tokens, geo.rows)}
    for shape in workload_plan(dims).shapes:
        counts[f"R_W:{shape.name}"] = ceil_div(shape.out_dim, geo.cols)
    return counts


def _vmm_cycles(dims: TransformerDims, config: HardwareConfig) -> List[Tuple[int, int]]:
    """(in_dim, sub-cycles) per weight matrix of one layer, with ceiling repeats."""
    geo, r = config.geometry, config.clocking.r_subcycles
    r_t = ceil_div(dims.tokens, geo.rows)
    return [
        (shape.in_dim, r_t * ceil_div(shape.out_dim, geo.cols) * shape.in_dim * r)
        for shape in workload_plan(dims).shapes
    ]


def system_delay(dims: TransformerDims, config: HardwareConfig) -> float:
    """
    Overall operation delay with ceiling repeats, ADC readout excluded.

    Equals f_clk^-1 * (4N^2 + 2MN) * r*T*L / (C_T*C_W) whenever the repeats divide
    exactly and S*H == N.

    Args:
        dims: Transformer dimensions
        config: Hardware configuration

    Returns:
        Delay in seconds
    """
    if dims.tokens < config.geometry.rows:
        logger.warning(
            f"C_T={config.geometry.rows} exceeds T={dims.tokens}; "
            f"{config.geometry.rows - dims.tokens} rows stay idle"
        )
    cycles = sum(c for _, c in _vmm_cycles(dims, config))
    return cycles * dims.layers / config.clocking.f_clk_hz


def closed_form_delay(dims: TransformerDims, config: HardwareConfig) -> float:
    """Delay from the closed form (requires S*H == N; ignores ceiling repeats)."""
    geo, clk = config.geometry, config.clocking
    macs = total_mac_ops(dims) // 2
    return macs * clk.r_subcycles / (clk.f_clk_hz * geo.rows * geo.cols)


def computing_speed(config: HardwareConfig) -> float:
    """Computing speed gamma = 2 * f_clk / r * C_T * C_W in ops/s."""
    geo, clk = config.geometry, config.clocking
    return 2.0 * clk.f_clk_hz / clk.r_subcycles * geo.rows * geo.cols


def _term_energies(config: HardwareConfig) -> Dict[str, float]:
    en, geo = config.energy, config.geometry
    e_read = 0.0 if en.exclude_hbm else en.e_read_j
    return {
        "hbm_read_weights": e_read / geo.cols,
        "demodulator": en.e_dm_j,
        "dac_dm": effective_edac_dm(config) / geo.rows,
        "hbm_read_inputs": e_read / geo.rows,
    }


def system_power(
    dims: TransformerDims, config: HardwareConfig, form: PowerForm = PowerForm.FULL
) -> PowerResult:
    """
    System power of the ATTN/FF matmuls.

    P = (eps*delta + E_read/C_W + E_DM + (E_DAC|DM + E_read)/C_T + (E_ADC + E_write)/(N*r))
        * f_clk * C_T * C_W

    The vector-length terms (eps*delta and the ADC/write term) are evaluated per
    weight matrix at its in_dim and averaged by the share of array time it takes.
    The APPROX form drops both, as for N >> 1.

    Args:
        dims: Transformer dimensions
        config: Hardware configuration
        form: FULL or APPROX

    Returns:
        PowerResult with the per-term breakdown
    """
    geo, clk, en = config.geometry, config.clocking, config.energy
    per_update = _term_energies(config)
    per_update["emitter"] = 0.0
    per_update["adc"] = 0.0
    per_update["hbm_write"] = 0.0

    if form == PowerForm.FULL:
        e_write = 0.0 if en.exclude_hbm else en.e_write_j
        vmm = _vmm_cycles(dims, config)
        total_cycles = sum(c for _, c in vmm)
        for in_dim, cycles in vmm:
            share = cycles / total_cycles
            per_update["emitter"] += share * min_pulse_energy(config.optics, clk, in_dim).e_u_j
            per_update["adc"] += share * en.e_adc_j / (in_dim * clk.r_subcycles)
            per_update["hbm_write"] += share * e_write / (in_dim * clk.r_subcycles)

    rate = clk.f_clk_hz * geo.rows * geo.cols
    breakdown = {name: energy * rate for name, energy in sorted(per_update.items())}
    return PowerResult(power_w=math.fsum(breakdown.values()), breakdown=breakdown, form=form)


def power_efficiency(
    dims: TransformerDims, config: HardwareConfig, form: PowerForm = PowerForm.APPROX
) -> float:
    """
    Computing power efficiency in ops/s/W.

    APPROX uses the closed form 2r^-1 / (E_read/C_W + E_DM + (E_DAC|DM + E_read)/C_T);
    FULL is gamma / P_sys with the full power expression.
    """
    if form == PowerForm.APPROX:
        lumped = math.fsum(_term_energies(config).values())
        if lumped == 0:
            return math.inf
        return 2.0 / config.clocking.r_subcycles / lumped
    power = system_power(dims, config, form).power_w
    return computing_speed(config) / power if power > 0 else math.inf


def system_area(config: HardwareConfig) -> float:
    """A_sys = A_pixel*C_T*C_W + A_DAC*(C_T + C_W) + A_other, in mm^2."""
    geo = config.geometry
    pixels = geo.pixel_area_um2 * geo.rows * geo.cols / UM2_PER_MM2
    dacs = config.area.a_dac_um2 * (geo.rows + geo.cols) / UM2_PER_MM2
    return pixels + dacs + config.area.a_other_mm2


def area_efficiency(config: HardwareConfig) -> float:
    """
    Computing area efficiency in ops/s/mm^2:
    2 f_clk r^-1 / (A_pixel + A_DAC*(1/C_W + 1/C_T) + A_other/(C_T*C_W)).
    """
    geo, clk = config.geometry, config.clocking
    per_pixel_mm2 = (
        geo.pixel_area_um2 / UM2_PER_MM2
        + config.area.a_dac_um2 / UM2_PER_MM2 * (1.0 / geo.cols + 1.0 / geo.rows)
        + config.area.a_other_mm2 / (geo.rows * geo.cols)
    )
    return 2.0 * clk.f_clk_hz / clk.r_subcycles / per_pixel_mm2


def perf_report(
    dims: TransformerDims,
    config: HardwareConfig,
    form: PowerForm = PowerForm.FULL,
    bytes_per_value: int = 1,
) -> PerfReport:
    """
    Evaluate every metric for one point.

    Args:
        dims: Transformer dimensions
        config: Hardware configuration
        form: Power expression to use
        bytes_per_value: Size of one embedding value for the host transfer estimate

    Returns:
        PerfReport
    """
    geo = config.geometry
    power = system_power(dims, config, form)
    speed = computing_speed(config)
    area = system_area(config)
    handling = power.power_w / area
    cooling_ok = None
    if config.cooling_threshold_w_mm2 is not None:
        cooling_ok = handling <= config.cooling_threshold_w_mm2
    repeats = repeat_counts(dims, config)
    return PerfReport(
        rows=geo.rows,
        cols=geo.cols,
        tasks_ops=total_mac_ops_general(dims),
        delay_s=system_delay(dims, config),
        speed_ops_s=speed,
        power_w=power.power_w,
        eff_ops_s_w=speed / power.power_w if power.power_w > 0 else math.inf,
        area_mm2=area,
        eff_ops_s_mm2=speed / area,
        handling_w_mm2=handling,
        repeats=repeats,
        breakdown=power.breakdown,
        power_form=form,
        idle_rows=repeats["R_T"] * geo.rows - dims.tokens,
        embedding_transfer_s=embedding_transfer_time(dims.tokens * dims.embed_dim * bytes_per_value),
        cooling_ok=cooling_ok,
    )


def with_array_size(config: HardwareConfig, rows: int, cols: int) -> HardwareConfig:
    """Copy of a config with a different pixel array size."""
    geometry = config.geometry.model_copy(update={"rows": rows, "cols": cols})
    return config.model_copy(update={"geometry": geometry})


def _evaluate_point(dims: TransformerDims, config: HardwareConfig, form: PowerForm) -> PerfReport:
    try:
        return perf_report(dims, config, form)
    except Exception as e:
        logger.error(f"Error evaluating {config.geometry.rows}x{config.geometry.cols}: {e}")
        raise


def sweep(
    dims: TransformerDims,
    config_template: HardwareConfig,
    ct_range: Iterable[int],
    cw_range: Iterable[int],
    form: PowerForm = PowerForm.FULL,
    threads: Optional[int] = None,
) -> List[PerfReport]:
    """
    Evaluate a grid of array sizes in parallel.

    Args:
        dims: Transformer dimensions
        config_template: Base configuration; only rows and cols change per point
        ct_range: C_T values
        cw_range: C_W values
        form: Power expression
        threads: Maximum worker threads (None lets the executor decide)

    Returns:
        Reports in row-major order (C_T outer, C_W inner)
    """
    ct_values, cw_values = list(ct_range), list(cw_range)
    if not ct_values or not cw_values:
        raise ValueError("sweep ranges must be non-empty")
    grid = [(ct, cw) for ct in ct_values for cw in cw_values]
    logger.info(f"Sweeping {len(ct_values)}x{len(cw_values)} array sizes")

    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        futures = [
            executor.submit(_evaluate_point, dims, with_array_size(config_template, ct, cw), form)
            for ct, cw in grid
        ]
        # Collect results in submission order
        return [future.result() for future in futures]


def compare_table1(report: PerfReport) -> List[Dict[str, Any]]:
    """
    Comparison rows: this NPU against one Nvidia T4 and one hundred T4s.

    Args:
        report: PerfReport of the NPU

    Returns:
        Rows with metrics in table units (TO, TOPS, ms, W, TOPS/W, mm^2, TOPS/mm^2, mW/mm^2)
    """
    rows = [{
        "system": "OEN",
        "tasks_to": report.tasks_ops / TERA,
        "speed_tops": report.speed_ops_s / TERA,
        "delay_ms": report.delay_s * 1e3,
        "power_w": report.power_w,
        "eff_tops_w": report.eff_ops_s_w / TERA,
        "area_mm2": report.area_mm2,
        "eff_tops_mm2": report.eff_ops_s_mm2 / TERA,
        "handling_mw_mm2": report.handling_w_mm2 * 1e3,
    }]
    for count in (1, 100):
        rows.append({
            "system": f"Nvidia T4 x{count}",
            "tasks_to": T4_TASKS_TO,
            "speed_tops": T4_SPEED_TOPS * count,
            "delay_ms": T4_DELAY_MS / count,
            "power_w": T4_POWER_W * count,
            "eff_tops_w": T4_EFF_TOPS_W,
            "area_mm2": T4_AREA_MM2 * count,
            "eff_tops_mm2": T4_EFF_TOPS_MM2,
            "handling_mw_mm2": T4_HANDLING_MW_MM2,
        })
    return rows


def calibrate_table1(
    config: HardwareConfig,
    target_eff_ops_s_w: float = TABLE1_TARGET_EFF_OPS_S_W,
    target_area_mm2: float = TABLE1_TARGET_AREA_MM2,
) -> Calibration:
    """
    Back-solve the unpublished energy and area scalars from the published efficiency
    and area.

    The lumped per-update energy x = E_DM + E_DAC|DM,eff/C_T = 2r^-1/eta_p is split by
    keeping E_DM and rescaling the selected DAC model (both coefficients by one factor,
    so its shape is preserved). A_DAC is the area left after the pixels and A_other,
    divided over the C_T + C_W DACs. HBM energy is excluded.

    Args:
        config: Starting hardware configuration
        target_eff_ops_s_w: Target power efficiency
        target_area_mm2: Target system area

    Returns:
        Calibration with the calibrated config and a derivation record

    Raises:
        ValueError: If the targets cannot be met with non-negative parameters
    """
    geo, clk, en = config.geometry, config.clocking, config.energy
    if not en.exclude_hbm:
        logger.warning("Calibration excludes HBM energy; setting exclude_hbm")
    lumped = 2.0 / clk.r_subcycles / target_eff_ops_s_w
    dac_share = lumped - en.e_dm_j
    if dac_share <= 0:
        raise ValueError(
            f"E_DM={en.e_dm_j:.3e} J already exceeds the lumped energy {lumped:.3e} J for "
            f"{target_eff_ops_s_w:.3e} ops/s/W"
        )

    current_share = effective_edac_dm(config) / geo.rows
    if current_share <= 0:
        raise ValueError(f"DAC model {en.dac_model!r} has zero energy; cannot rescale it")
    scale = dac_share / current_share
    model = config.selected_dac()
    scaled = model.model_copy(update={
        "e_fixed_j": model.e_fixed_j * scale,
        "e_per_pixel_j": model.e_per_pixel_j * scale,
    })
    dac_map = dict(config.dac)
    dac_map[en.dac_model] = scaled

    pixel_mm2 = geo.pixel_area_um2 * geo.rows * geo.cols / UM2_PER_MM2
    residual_mm2 = target_area_mm2 - pixel_mm2 - config.area.a_other_mm2
    if residual_mm2 < 0:
        raise ValueError(
            f"Pixel area {pixel_mm2:.2f} mm^2 plus A_other exceeds the target {target_area_mm2} mm^2"
        )
    a_dac_um2 = residual_mm2 * UM2_PER_MM2 / (geo.rows + geo.cols)

    calibrated = config.model_copy(update={
        "dac": dac_map,
        "energy": en.model_copy(update={"exclude_hbm": True}),
        "area": config.area.model_copy(update={"a_dac_um2": a_dac_um2}),
    })
    derivation = {
        "label": "DERIVED",
        "target_eff_ops_s_w": target_eff_ops_s_w,
        "target_area_mm2": target_area_mm2,
        "lumped_energy_j": lumped,
        "e_dm_j": en.e_dm_j,
        "dac_share_j": dac_share,
        "e_dac_dm_eff_j": dac_share * geo.rows,
        "dac_model": en.dac_model,
        "dac_scale": scale,
        "pixel_area_mm2": pixel_mm2,
        "a_dac_um2": a_dac_um2,
    }
    logger.info(f"Calibrated lumped energy {lumped:.4e} J, A_DAC {a_dac_um2:.1f} um^2")
    return Calibration(config=calibrated, derivation=derivation)
