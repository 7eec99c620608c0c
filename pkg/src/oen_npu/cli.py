"""
Subcommands of the oen-npu command line.
"""

import argparse
import logging
import typing
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Type, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .atoms.hardware.budget import adc_coverage, io_rates, memory_budget
from .atoms.hardware.dac import crossover_pixels, scaling_table
from .atoms.hardware.snr import min_pulse_energy, snr_condition_holds, snr_operating_point
from .atoms.pixel.demodulator import (
    ClipCounter,
    PixelParams,
    PixelState,
    accumulate,
    differential,
    drive_batch,
    mac_exact,
    readout,
    signal_gain_e,
)
from .atoms.shared.config import ProjectConfig, config_to_dict
from .atoms.shared.data_types import DacKind, Fidelity, MatmulRoute, PowerForm, SequenceMode
from .atoms.shared.utils import ELECTRON_CHARGE_C, TERA, make_rng
from .atoms.shared.validator import validate_project
from .molecules.mmm_engine import execute, read_matrix, run_model, trace_totals, write_matrix
from .molecules.perf_analytics import (
    SWEEP_COLUMNS,
    calibrate_table1,
    compare_table1,
    perf_report,
    sweep,
)
from .molecules.quant_noise import eval_under_noise, model_size_study, qat_finetune
from .molecules.toy_model import train_toy

logger = logging.getLogger(__name__)


# Command names
class NpuCommands:
    PERF = "perf"
    SWEEP = "sweep"
    DAC = "dac"
    SNR = "snr"
    PIXEL = "pixel"
    MMM = "mmm"
    NOISE_EVAL = "noise-eval"
    CALIBRATE = "calibrate"
    VALIDATE = "validate"


RANDOMIZED_COMMANDS = {NpuCommands.PIXEL, NpuCommands.MMM, NpuCommands.NOISE_EVAL}


# Argument schemas, one per command
class PerfSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    power_form: PowerForm = Field(PowerForm.FULL, description="Power expression: full or the N>>1 approximation")
    compare: bool = Field(False, description="Include the comparison rows against the Nvidia T4")


class SweepSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ct: List[int] = Field([512, 1024, 2048, 4096, 8192], description="C_T values (pixel rows)")
    cw: List[int] = Field([768, 1536, 3072, 6144, 12288], description="C_W values (pixel columns)")
    power_form: PowerForm = Field(PowerForm.FULL, description="Power expression")


class DacSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_values: List[int] = Field(
        [1, 10, 100, 1000, 2048, 10000, 100000], description="Pixel counts driven per DAC"
    )
    models: Optional[List[str]] = Field(None, description="DAC model names (default: all in hardware.dac)")


class SnrSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_values: List[int] = Field([100, 1000, 10000, 12288], description="Vector lengths N")


class PixelSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    length: int = Field(16, description="Vector length for random inputs")
    x: Optional[List[float]] = Field(None, description="Input vector in [-1, 1] (default: random)")
    w: Optional[List[float]] = Field(None, description="Weight vector in [-1, 1] (default: random)")
    r_subcycles: Optional[int] = Field(None, description="Sub-cycles 1, 2 or 4 (default: from config)")
    trials: int = Field(1, description="Repeated accumulations of the same MAC")
    noise: bool = Field(False, description="Sample shot noise")


class MmmSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fidelity: Fidelity = Field(Fidelity.EXACT, description="exact, quantized or full_noise")
    x_path: Optional[str] = Field(None, description="Input matrix file (in_dim x batch)")
    w_path: Optional[str] = Field(None, description="Weight matrix file (out_dim x in_dim)")
    y_path: Optional[str] = Field(None, description="Write the result matrix here")
    in_dim: int = Field(64, description="in_dim for random matrices")
    out_dim: int = Field(48, description="out_dim for random matrices")
    batch: int = Field(32, description="Batch (tokens) for random matrices")
    model: bool = Field(False, description="Run every weight matmul of the configured workload")
    timing_only: bool = Field(False, description="With --model: schedule and time without computing")


class NoiseEvalSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigmas: List[float] = Field([0.0, 0.02, 0.04, 0.06, 0.08, 0.10], description="Noise strengths")
    trials: int = Field(5, description="Trials per noise strength")
    no_quant: bool = Field(False, description="Evaluate at full precision instead of INT8 PTQ")
    qat_epochs: int = Field(0, description="Also evaluate a QAT fine-tuned copy after this many epochs")
    route: MatmulRoute = Field(MatmulRoute.GAUSSIAN, description="gaussian proxy noise or the pixel engine")
    size_study: bool = Field(False, description="Also compare a smaller and a larger toy model")


class CalibrateSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")

    target_eff_tops_w: float = Field(74.0, description="Target power efficiency, TOPS/W")
    target_area_mm2: float = Field(654.0, description="Target system area, mm^2")


class ValidateSchema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunContext(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: ProjectConfig
    config_path: Optional[str] = None
    seed: Optional[int] = None
    threads: Optional[int] = None


class CommandResult(BaseModel):
    """Data produced by a command, ready for emission."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    format: str = Field(..., description="json or csv")
    data: Any
    columns: List[str] = Field(default_factory=list)
    sidecars: Dict[str, Any] = Field(default_factory=dict, description="Extra JSON files by suffix")
    files: List[str] = Field(default_factory=list, description="Files the command wrote itself")
    exit_code: int = 0
    summary: str = ""


def _unwrap_optional(annotation):
    if typing.get_origin(annotation) is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return annotation


def add_schema_arguments(parser: argparse.ArgumentParser, schema: Type[BaseModel]) -> None:
    """
    Add one flag per schema field: snake_case becomes --kebab-case.

    Flags default to None so that only given values reach the schema.
    """
    for name, field in schema.model_fields.items():
        flag = "--" + name.replace("_", "-")
        annotation = _unwrap_optional(field.annotation)
        help_text = field.description or ""
        if not field.is_required():
            default = field.default.value if isinstance(field.default, Enum) else field.default
            help_text = f"{help_text} (default: {default})"
        kwargs: Dict[str, Any] = {"dest": name, "default": None, "help": help_text}
        if annotation is bool:
            kwargs["action"] = "store_true"
        elif typing.get_origin(annotation) in (list, List):
            kwargs["nargs"] = "+"
            kwargs["type"] = typing.get_args(annotation)[0]
        elif isinstance(annotation, type) and issubclass(annotation, Enum):
            kwargs["choices"] = [m.value for m in annotation]
        else:
            kwargs["type"] = annotation
        if field.is_required():
            kwargs["required"] = True
        parser.add_argument(flag, **kwargs)


def parse_schema(schema: Type[BaseModel], namespace: argparse.Namespace) -> BaseModel:
    """Validate the given flags against a schema; unset flags take schema defaults."""
    values = {name: getattr(namespace, name) for name in schema.model_fields if getattr(namespace, name, None) is not None}
    return schema.model_validate(values)


def _perf(options: PerfSchema, ctx: RunContext) -> CommandResult:
    cfg = ctx.config
    report = perf_report(cfg.workload, cfg.hardware, options.power_form, cfg.simulation.bytes_per_value)
    data = report.to_dict()
    data["io_rates"] = io_rates(cfg.hardware)
    data["adc_coverage"] = adc_coverage(cfg.hardware)
    data["memory_budget"] = memory_budget(cfg.hardware, cfg.workload, cfg.simulation.bytes_per_value)
    if options.compare:
        data["comparison"] = compare_table1(report)
    summary = (
        f"{report.speed_ops_s / TERA:.0f} TOPS, {report.delay_s * 1e3:.2f} ms, {report.power_w:.1f} W, "
        f"{report.eff_ops_s_w / TERA:.1f} TOPS/W, {report.area_mm2:.1f} mm^2"
    )
    return CommandResult(format="json", data=data, summary=summary)


def _sweep(options: SweepSchema, ctx: RunContext) -> CommandResult:
    cfg = ctx.config
    reports = sweep(cfg.workload, cfg.hardware, options.ct, options.cw, options.power_form, ctx.threads)
    return CommandResult(
        format="csv",
        data=[r.sweep_row() for r in reports],
        columns=SWEEP_COLUMNS,
        summary=f"{len(reports)} sweep points",
    )


def _dac(options: DacSchema, ctx: RunContext) -> CommandResult:
    models = ctx.config.hardware.dac
    if options.models:
        missing = [m for m in options.models if m not in models]
        if missing:
            raise ValueError(f"Unknown DAC model(s) {missing} (available: {sorted(models)})")
        models = {m: models[m] for m in options.models}
    rows = scaling_table(models, options.n_values)

    crossovers = []
    for rname, rdac in models.items():
        for iname, idac in models.items():
            if rdac.kind == DacKind.RDAC and idac.kind == DacKind.IDAC and rdac.load_impedance_ohm == idac.load_impedance_ohm:
                crossovers.append(f"{iname} beats {rname} from n={crossover_pixels(rdac, idac)}")
    return CommandResult(
        format="csv",
        data=rows,
        columns=["model", "kind", "load_impedance_ohm", "n_pixels", "total_energy_j", "per_pixel_energy_j", "area_um2"],
        summary="; ".join(sorted(crossovers)),
    )


def _snr(options: SnrSchema, ctx: RunContext) -> CommandResult:
    hw = ctx.config.hardware
    rows = []
    for n in options.n_values:
        pulse = min_pulse_energy(hw.optics, hw.clocking, n)
        holds, ratio = snr_condition_holds(snr_operating_point(hw.optics, hw.clocking, n, pulse.e_u_j))
        rows.append({
            "n_vec": n,
            "i_th_a": pulse.i_th_a,
            "i_dark_a": hw.optics.i_dark_a,
            "regime": pulse.regime,
            "epsilon_j": pulse.epsilon_j,
            "delta": pulse.delta,
            "e_u_j": pulse.e_u_j,
            "exact_e_u_j": pulse.exact_e_u_j,
            "snr_ratio": ratio,
            "snr_holds": holds,
        })
    columns = ["n_vec", "i_th_a", "i_dark_a", "regime", "epsilon_j", "delta", "e_u_j", "exact_e_u_j", "snr_ratio", "snr_holds"]
    return CommandResult(format="csv", data=rows, columns=columns, summary=f"{len(rows)} vector lengths")


def _pixel(options: PixelSchema, ctx: RunContext) -> CommandResult:
    hw, sim = ctx.config.hardware, ctx.config.simulation
    clocking = hw.clocking
    if options.r_subcycles is not None:
        clocking = clocking.model_copy(update={"r_subcycles": options.r_subcycles})
    mode = SequenceMode.from_subcycles(clocking.r_subcycles)

    rng = make_rng(ctx.seed, 0)
    x = np.asarray(options.x) if options.x is not None else rng.uniform(-1.0, 1.0, options.length)
    w = np.asarray(options.w) if options.w is not None else rng.uniform(-1.0, 1.0, len(x))
    clipped = ClipCounter()
    batch = drive_batch(x, w, clipped)
    n = len(x)
    drive = sim.drive_energy_j
    if drive is None:
        drive = min_pulse_energy(hw.optics, clocking, n).e_u_j
    gain_e = signal_gain_e(hw.optics, mode, drive)
    volts_per_unit = gain_e * ELECTRON_CHARGE_C / hw.optics.c_pix_f
    range_v = n * sim.adc_range_scale * volts_per_unit
    params = PixelParams.from_optics(hw.optics)

    trials = []
    for t in range(options.trials):
        state = accumulate(
            PixelState(params=params), batch, mode, hw.optics, clocking,
            noise_on=options.noise, rng_seed=ctx.seed, stream=(0, t), drive_energy_j=drive,
        )
        result = readout(
            state, clocking.adc_bits, range_v, sim.read_noise_e, sim.adc_noise_lsb, rng=make_rng(ctx.seed, 1, t)
        )
        estimate = result.value_v / volts_per_unit
        if mode == SequenceMode.UNIPOLAR_SINGLE:
            estimate = 4.0 * estimate - float(np.sum(x)) - float(np.sum(w)) - n
        trials.append({
            "trial": t,
            "q_plus_e": state.q_plus_e,
            "q_minus_e": state.q_minus_e,
            "differential_e": differential(state),
            "adc_code": result.code,
            "adc_value_v": result.value_v,
            "estimate": estimate,
            "overflow": result.overflow,
            "saturated": state.saturated,
        })
    exact = mac_exact(x, w)
    data = {
        "mode": mode.full_name,
        "length": n,
        "exact": exact,
        "drive_energy_j": drive,
        "signal_gain_e": gain_e,
        "adc_range_v": range_v,
        "clipped": clipped.count,
        "trials": trials,
    }
    return CommandResult(format="json", data=data, summary=f"exact {exact:.6f}, first estimate {trials[0]['estimate']:.6f}" if trials else "")


def _mmm(options: MmmSchema, ctx: RunContext) -> CommandResult:
    cfg = ctx.config
    hw, sim = cfg.hardware, cfg.simulation
    if options.model:
        run = run_model(cfg.workload, hw, options.fidelity, ctx.seed, sim, options.timing_only)
        per_layer = {}
        if run.layers:
            per_layer = {name: trace_totals(trace) for name, trace in run.layers[0].traces.items()}
        data = {"layers": len(run.layers), "check": run.check, "per_layer_totals": per_layer}
        summary = ""
        if run.check is not None:
            summary = (
                f"enumerated {run.check.enumerated_delay_s * 1e3:.3f} ms vs closed form "
                f"{run.check.closed_form_delay_s * 1e3:.3f} ms"
            )
        return CommandResult(format="json", data=data, summary=summary)

    rng = make_rng(ctx.seed, 0)
    x = read_matrix(options.x_path) if options.x_path else rng.uniform(-1.0, 1.0, (options.in_dim, options.batch))
    w = read_matrix(options.w_path) if options.w_path else rng.uniform(-1.0, 1.0, (options.out_dim, x.shape[0]))
    result = execute(x, w, hw, options.fidelity, ctx.seed, sim)
    error = float(np.max(np.abs(result.y - w @ x))) if result.y.size else 0.0
    schedule = result.schedule
    data = {
        "fidelity": options.fidelity,
        "shape": {"out_dim": w.shape[0], "in_dim": x.shape[0], "batch": x.shape[1]},
        "schedule": {
            "r_t": schedule.r_t,
            "r_w": schedule.r_w,
            "repeats": schedule.repeats,
            "illumination_cycles": schedule.illumination_cycles,
            "illumination_s": schedule.illumination_s,
            "adc_readout_s": schedule.adc_readout_s,
        },
        "totals": trace_totals(result.trace),
        "overflow_count": result.overflow_count,
        "saturated_count": result.saturated_count,
        "max_abs_error": error,
    }
    files = []
    if options.y_path:
        files.append(str(write_matrix(options.y_path, result.y)))
    return CommandResult(format="json", data=data, files=files, summary=f"max |Y - WX| = {error:.3e}")


def _noise_eval(options: NoiseEvalSchema, ctx: RunContext) -> CommandResult:
    cfg = ctx.config
    qcfg = None if options.no_quant else cfg.quant
    model = train_toy(cfg.dataset, cfg.model, ctx.seed)
    curves = [eval_under_noise(
        model, qcfg, options.sigmas, options.trials, ctx.seed, noise=cfg.noise, route=options.route,
        hardware=cfg.hardware, sim=cfg.simulation, threads=ctx.threads, label="ptq" if qcfg else "fp",
    )]
    if options.qat_epochs > 0:
        tuned = qat_finetune(model, cfg.quant, options.qat_epochs, ctx.seed)
        curves.append(eval_under_noise(
            tuned, cfg.quant, options.sigmas, options.trials, ctx.seed, noise=cfg.noise, route=options.route,
            hardware=cfg.hardware, sim=cfg.simulation, threads=ctx.threads, label="qat",
        ))
    if options.size_study:
        small = cfg.model.model_copy(update={"embed_dim": max(cfg.model.heads, cfg.model.embed_dim // 2), "layers": 1})
        study = model_size_study(cfg.dataset, small, cfg.model, qcfg, options.sigmas, options.trials, ctx.seed, ctx.threads)
        curves.extend(study.values())

    rows = [dict(row, curve=curve.label) for curve in curves for row in curve.rows()]
    summary = {"curves": [curve.summary() for curve in curves]}
    first = curves[0].points
    text = f"accuracy {first[0].mean_accuracy:.4f} at sigma={first[0].sigma} -> {first[-1].mean_accuracy:.4f} at sigma={first[-1].sigma}" if first else ""
    return CommandResult(
        format="csv",
        data=rows,
        columns=["curve", "sigma", "trial", "accuracy"],
        sidecars={".summary.json": summary},
        summary=text,
    )


def _calibrate(options: CalibrateSchema, ctx: RunContext) -> CommandResult:
    cfg = ctx.config
    calibration = calibrate_table1(cfg.hardware, options.target_eff_tops_w * TERA, options.target_area_mm2)
    report = perf_report(cfg.workload, calibration.config)
    data = {
        "derivation": calibration.derivation,
        "hardware": config_to_dict(calibration.config),
        "report": report.to_dict(),
        "comparison": compare_table1(report),
    }
    return CommandResult(
        format="json",
        data=data,
        summary=f"{report.eff_ops_s_w / TERA:.2f} TOPS/W, {report.power_w:.1f} W, {report.area_mm2:.1f} mm^2",
    )


def _validate(options: ValidateSchema, ctx: RunContext) -> CommandResult:
    violations = validate_project(ctx.config)
    data = {"valid": not violations, "violations": [str(v) for v in violations]}
    return CommandResult(
        format="json",
        data=data,
        exit_code=1 if violations else 0,
        summary="config is valid" if not violations else f"{len(violations)} violation(s)",
    )


COMMANDS: Dict[str, typing.Tuple[Type[BaseModel], Callable[[Any, RunContext], CommandResult], str]] = {
    NpuCommands.PERF: (PerfSchema, _perf, "Single-point performance report (JSON)"),
    NpuCommands.SWEEP: (SweepSchema, _sweep, "Array-size design-space sweep (CSV)"),
    NpuCommands.DAC: (DacSchema, _dac, "RDAC/IDAC energy and area scaling (CSV)"),
    NpuCommands.SNR: (SnrSchema, _snr, "Minimal pulse energy and threshold dark current (CSV)"),
    NpuCommands.PIXEL: (PixelSchema, _pixel, "Single demodulator-pixel MAC (JSON)"),
    NpuCommands.MMM: (MmmSchema, _mmm, "Matrix execution on the pixel array with its timing trace (JSON)"),
    NpuCommands.NOISE_EVAL: (NoiseEvalSchema, _noise_eval, "Toy-model accuracy under quantization and noise (CSV)"),
    NpuCommands.CALIBRATE: (CalibrateSchema, _calibrate, "Back-solve energy and area scalars from the table1 targets (JSON)"),
    NpuCommands.VALIDATE: (ValidateSchema, _validate, "Check a configuration (JSON)"),
}


def run_command(name: str, options: BaseModel, ctx: RunContext) -> CommandResult:
    """
    Dispatch a command.

    Args:
        name: Command name from NpuCommands
        options: Parsed argument schema of that command
        ctx: Resolved config, seed and thread cap

    Returns:
        CommandResult

    Raises:
        ValueError: On an unknown command or a missing seed
    """
    if name not in COMMANDS:
        raise ValueError(f"Unknown command: {name}")
    if name in RANDOMIZED_COMMANDS and ctx.seed is None:
        raise ValueError(f"{name} is randomized and requires --seed")
    if name != NpuCommands.VALIDATE:
        violations = validate_project(ctx.config)
        if violations:
            for violation in violations:
                logger.error(f"Config violation: {violation}")
            return CommandResult(
                format="json",
                data={"valid": False, "violations": [str(v) for v in violations]},
                exit_code=1,
                summary=f"{len(violations)} config violation(s)",
            )
    logger.info(f"Running {name}")
    _, handler, _ = COMMANDS[name]
    try:
        return handler(options, ctx)
    except Exception as e:
        logger.error(f"Error running {name}: {e}")
        raise
