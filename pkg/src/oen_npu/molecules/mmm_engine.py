"""
Maps matrix multiplications onto the C_T x C_W pixel array and executes them.

Inputs are laid out one token per array row and weight rows one per array column,
so a VMM of shape (out_dim x in_dim) on a batch of T vectors needs
R_T = ceil(T/C_T) by R_W = ceil(out_dim/C_W) temporal repeats. Each repeat runs the
timing sequence: load inputs and weights from HBM, illuminate for in_dim*r clocks,
read the pixels out through the ADCs, write results back, reset.
"""

import concurrent.futures
import logging
import struct
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..atoms.hardware.snr import min_pulse_energy
from ..atoms.pixel.demodulator import (
    accumulate_block,
    quantize_adc,
    readout_block,
    signal_gain_e,
)
from ..atoms.shared.config import HardwareConfig, SimulationParams
from ..atoms.shared.data_types import BudgetExceededError, Fidelity, OutOfRangeError, SequenceMode
from ..atoms.shared.utils import ELECTRON_CHARGE_C, ceil_div, derive_seed, make_rng
from ..atoms.workload.transformer import TransformerDims, VmmShape, attention_pattern_ops, workload_plan
from .perf_analytics import system_delay

logger = logging.getLogger(__name__)

MATRIX_MAGIC = b"OENM"
_HEADER = struct.Struct("<4sQQ")

EventKind = Literal["hbm_read", "illuminate", "adc_readout", "hbm_write", "reset"]


class TileAssignment(BaseModel):
    model_config = ConfigDict(frozen=True)

    repeat: int
    row_start: int
    row_stop: int
    col_start: int
    col_stop: int

    @property
    def rows_used(self) -> int:
        return self.row_stop - self.row_start

    @property
    def cols_used(self) -> int:
        return self.col_stop - self.col_start


class TileSchedule(BaseModel):
    """Row-major tiling of one VMM onto the array."""
    model_config = ConfigDict(frozen=True)

    shape: VmmShape
    rows: int
    cols: int
    r_t: int
    r_w: int
    tiles: Tuple[TileAssignment, ...]
    illumination_cycles: int = Field(..., description="in_dim * r clocks per repeat")
    illumination_s: float
    adc_readout_s: float
    reset_s: float = 0.0

    @property
    def repeats(self) -> int:
        return self.r_t * self.r_w


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: EventKind
    repeat: int
    duration_s: float = 0.0
    num_bytes: int = 0


class TimingTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    vmm: str = ""
    events: Tuple[TraceEvent, ...] = ()


class TraceTotals(BaseModel):
    model_config = ConfigDict(frozen=True)

    compute_time_s: float = 0.0
    readout_time_s: float = 0.0
    reset_time_s: float = 0.0
    total_time_s: float = 0.0
    hbm_bytes_read: int = 0
    hbm_bytes_written: int = 0


class ExecutionResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    y: np.ndarray
    trace: TimingTrace
    schedule: TileSchedule
    overflow_count: int = 0
    saturated_count: int = 0


class PerfCheck(BaseModel):
    """Schedule-enumerated timing compared with the closed-form delay."""
    model_config = ConfigDict(frozen=True)

    enumerated_delay_s: float
    closed_form_delay_s: float
    relative_error: float
    readout_time_s: float
    readout_to_illumination: float
    attention_ops: int


class LayerRun(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    layer: int
    traces: Dict[str, TimingTrace]
    outputs: Dict[str, np.ndarray] = Field(default_factory=dict)


class ModelRun(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    layers: List[LayerRun]
    check: Optional[PerfCheck] = None


def plan(shape: VmmShape, config: HardwareConfig, sim: SimulationParams = SimulationParams()) -> TileSchedule:
    """
    Tile a VMM onto the array, batch tiles outer and weight-row tiles inner.

    Args:
        shape: VMM shape
        config: Hardware configuration
        sim: Simulation parameters (reset time)

    Returns:
        TileSchedule covering every (input, output-row) pair exactly once
    """
    geo, clk = config.geometry, config.clocking
    r_t = ceil_div(shape.batch, geo.rows)
    r_w = ceil_div(shape.out_dim, geo.cols)
    tiles = []
    for t in range(r_t):
        for w in range(r_w):
            tiles.append(TileAssignment(
                repeat=len(tiles),
                row_start=t * geo.rows,
                row_stop=min((t + 1) * geo.rows, shape.batch),
                col_start=w * geo.cols,
                col_stop=min((w + 1) * geo.cols, shape.out_dim),
            ))
    if r_t * geo.rows > shape.batch:
        logger.debug(f"{shape.name}: {r_t * geo.rows - shape.batch} idle rows in the last batch tile")
    cycles = shape.in_dim * clk.r_subcycles
    return TileSchedule(
        shape=shape,
        rows=geo.rows,
        cols=geo.cols,
        r_t=r_t,
        r_w=r_w,
        tiles=tuple(tiles),
        illumination_cycles=cycles,
        illumination_s=cycles / clk.f_clk_hz,
        adc_readout_s=geo.pixels_per_adc / clk.adc_sample_rate_hz,
        reset_s=sim.reset_time_s,
    )


def schedule_trace(schedule: TileSchedule, bytes_per_value: int = 1) -> TimingTrace:
    """
    Timing trace of a schedule, one event group per repeat.

    Weights are read once per repeat per column and inputs once per row; the
    C_T-fold and C_W-fold reuse inside the array costs no HBM traffic.
    """
    events = []
    in_dim = schedule.shape.in_dim
    for tile in schedule.tiles:
        read_bytes = (tile.rows_used + tile.cols_used) * in_dim * bytes_per_value
        write_bytes = tile.rows_used * tile.cols_used * bytes_per_value
        events.extend([
            TraceEvent(kind="hbm_read", repeat=tile.repeat, num_bytes=read_bytes),
            TraceEvent(kind="illuminate", repeat=tile.repeat, duration_s=schedule.illumination_s),
            TraceEvent(kind="adc_readout", repeat=tile.repeat, duration_s=schedule.adc_readout_s),
            TraceEvent(kind="hbm_write", repeat=tile.repeat, num_bytes=write_bytes),
            TraceEvent(kind="reset", repeat=tile.repeat, duration_s=schedule.reset_s),
        ])
    return TimingTrace(vmm=schedule.shape.name, events=tuple(events))


def trace_totals(trace: TimingTrace) -> TraceTotals:
    """Sum a trace by event class."""
    sums = {"illuminate": 0.0, "adc_readout": 0.0, "reset": 0.0}
    read_bytes = write_bytes = 0
    for event in trace.events:
        if event.kind in sums:
            sums[event.kind] += event.duration_s
        elif event.kind == "hbm_read":
            read_bytes += event.num_bytes
        else:
            write_bytes += event.num_bytes
    return TraceTotals(
        compute_time_s=sums["illuminate"],
        readout_time_s=sums["adc_readout"],
        reset_time_s=sums["reset"],
        total_time_s=sum(sums.values()),
        hbm_bytes_read=read_bytes,
        hbm_bytes_written=write_bytes,
    )


def dac_quantize(values: np.ndarray, dac_bits: int) -> np.ndarray:
    """Mid-tread DAC levels over [-1, 1]: 2^b - 1 levels, ends exactly representable."""
    half_levels = 2 ** (dac_bits - 1) - 1
    return np.rint(values * half_levels) / half_levels


def _check_range(name: str, matrix: np.ndarray) -> None:
    bad = ~np.isfinite(matrix) | (np.abs(matrix) > 1.0)
    if bad.any():
        indices = np.argwhere(bad)
        logger.error(f"{name} has {len(indices)} entries outside [-1, 1]")
        raise OutOfRangeError(f"{name} has {len(indices)} entries outside [-1, 1]", indices)


def _exact_tile(x: np.ndarray, w: np.ndarray, tile: TileAssignment) -> np.ndarray:
    return w[tile.col_start:tile.col_stop] @ x[:, tile.row_start:tile.row_stop]


def _pixel_columns(
    x_q: np.ndarray,
    w_q: np.ndarray,
    tile: TileAssignment,
    out_rows: range,
    config: HardwareConfig,
    sim: SimulationParams,
    mode: SequenceMode,
    drive_energy_j: float,
    range_v: float,
    volts_per_unit: float,
    seed: int,
) -> Tuple[np.ndarray, int, int]:
    """Simulate the pixels of a slice of weight rows inside one tile, one block per chunk."""
    cols = range(tile.row_start, tile.row_stop)
    charges = accumulate_block(
        (x_q[:, tile.row_start:tile.row_stop] + 1.0) / 2.0,
        (w_q[out_rows.start:out_rows.stop] + 1.0) / 2.0,
        mode,
        config.optics,
        config.clocking,
        drive_energy_j,
        noise_on=sim.shot_noise,
        rng_seed=seed,
        row_ids=out_rows,
        col_ids=cols,
    )
    _, values_v, overflow = readout_block(
        charges,
        mode,
        config.optics.c_pix_f,
        config.clocking.adc_bits,
        range_v,
        read_noise_e=sim.read_noise_e,
        adc_noise_lsb=sim.adc_noise_lsb,
        rng_seed=seed,
        row_ids=out_rows,
        col_ids=cols,
    )
    return values_v / volts_per_unit, int(overflow.sum()), int(charges.saturated.sum())


def execute(
    x: np.ndarray,
    w: np.ndarray,
    config: HardwareConfig,
    fidelity: Fidelity = Fidelity.EXACT,
    seed: int = 0,
    sim: SimulationParams = SimulationParams(),
    adc_range: Optional[float] = None,
    name: str = "vmm",
) -> ExecutionResult:
    """
    Execute Y = W X on the array.

    Args:
        x: Inputs, shape (in_dim, batch), entries in [-1, 1]
        w: Weights, shape (out_dim, in_dim), entries in [-1, 1]
        config: Hardware configuration
        fidelity: EXACT (oracle), QUANTIZED (DAC and ADC quantization) or FULL_NOISE
            (per-pixel charge simulation)
        seed: Base seed for FULL_NOISE
        sim: Simulation parameters
        adc_range: ADC full scale in dot-product units; defaults to
            in_dim * sim.adc_range_scale
        name: Label used in the trace

    Returns:
        ExecutionResult with Y of shape (out_dim, batch) and the timing trace

    Raises:
        ValueError: On inconsistent shapes
        OutOfRangeError: If entries fall outside [-1, 1]
        BudgetExceededError: If a FULL_NOISE run exceeds sim.max_pixel_trials
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError(f"Shape mismatch: W {w.shape} cannot multiply X {x.shape}")
    _check_range("X", x)
    _check_range("W", w)

    in_dim, batch = x.shape
    out_dim = w.shape[0]
    shape = VmmShape(name=name, out_dim=out_dim, in_dim=in_dim, batch=batch)
    schedule = plan(shape, config, sim)
    trace = schedule_trace(schedule, sim.bytes_per_value)

    if fidelity == Fidelity.FULL_NOISE:
        required = out_dim * batch * in_dim
        if required > sim.max_pixel_trials:
            logger.warning(f"Refusing full_noise {name}: {required} pixel-trials")
            raise BudgetExceededError(required, sim.max_pixel_trials)

    y = np.zeros((out_dim, batch))
    overflow_count = saturated_count = 0
    if fidelity == Fidelity.EXACT:
        for tile in schedule.tiles:
            y[tile.col_start:tile.col_stop, tile.row_start:tile.row_stop] = _exact_tile(x, w, tile)
        return ExecutionResult(y=y, trace=trace, schedule=schedule)

    full_scale = adc_range if adc_range is not None else in_dim * sim.adc_range_scale
    x_q = dac_quantize(x, config.clocking.dac_bits)
    w_q = dac_quantize(w, config.clocking.dac_bits)

    if fidelity == Fidelity.QUANTIZED:
        for tile in schedule.tiles:
            _, values, overflow = quantize_adc(_exact_tile(x_q, w_q, tile), config.clocking.adc_bits, full_scale)
            y[tile.col_start:tile.col_stop, tile.row_start:tile.row_stop] = values
            overflow_count += int(np.count_nonzero(overflow))
        return ExecutionResult(y=y, trace=trace, schedule=schedule, overflow_count=overflow_count)

    mode = SequenceMode.from_subcycles(config.clocking.r_subcycles)
    drive = sim.drive_energy_j
    if drive is None:
        drive = min_pulse_energy(config.optics, config.clocking, in_dim).e_u_j
    volts_per_unit = signal_gain_e(config.optics, mode, drive) * ELECTRON_CHARGE_C / config.optics.c_pix_f
    range_v = full_scale * volts_per_unit

    # repeats share the array and run in order; pixels inside a repeat are independent
    with concurrent.futures.ThreadPoolExecutor(max_workers=sim.threads) as executor:
        for tile in schedule.tiles:
            chunks = [
                c for c in np.array_split(np.arange(tile.col_start, tile.col_stop), min(tile.cols_used, 8))
                if len(c)
            ]
            futures = [
                executor.submit(
                    _pixel_columns, x_q, w_q, tile, range(int(c[0]), int(c[-1]) + 1), config, sim,
                    mode, drive, range_v, volts_per_unit, seed,
                )
                for c in chunks
            ]
            for chunk, future in zip(chunks, futures):
                block, overflows, saturations = future.result()
                y[int(chunk[0]):int(chunk[-1]) + 1, tile.row_start:tile.row_stop] = block
                overflow_count += overflows
                saturated_count += saturations

    if mode == SequenceMode.UNIPOLAR_SINGLE:
        # r=1 reads sum(R*C) = (x.w + sum(x) + sum(w) + N)/4; remove the known offsets digitally
        y = 4.0 * y - x_q.sum(axis=0)[None, :] - w_q.sum(axis=1)[:, None] - in_dim
    if saturated_count:
        logger.warning(f"{name}: {saturated_count} saturated pixel(s)")
    return ExecutionResult(
        y=y, trace=trace, schedule=schedule,
        overflow_count=overflow_count, saturated_count=saturated_count,
    )


def pixel_trials(dims: TransformerDims) -> int:
    """Element accumulations needed to run every weight matmul of the model on pixels."""
    return dims.layers * sum(s.out_dim * s.batch * s.in_dim for s in workload_plan(dims).shapes)


def _attention_pattern(y_qkv: np.ndarray, dims: TransformerDims) -> np.ndarray:
    sh, s = dims.head_dim * dims.heads, dims.head_dim
    q, k, v = y_qkv[:sh], y_qkv[sh:2 * sh], y_qkv[2 * sh:]
    heads = []
    for h in range(dims.heads):
        rows = slice(h * s, (h + 1) * s)
        pattern = k[rows].T @ q[rows]
        heads.append(v[rows] @ pattern)
    return np.vstack(heads)


def run_model(
    dims: TransformerDims,
    config: HardwareConfig,
    fidelity: Fidelity = Fidelity.EXACT,
    seed: int = 0,
    sim: SimulationParams = SimulationParams(),
    timing_only: bool = False,
) -> ModelRun:
    """
    Run every weight matmul of every layer on the array.

    Matrices are drawn uniformly from [-1, 1] per (layer, matrix) stream. The attention
    pattern (K^T Q and V K^T Q) is computed on the exact path only and never scheduled.

    Args:
        dims: Transformer dimensions; layers may be 0
        config: Hardware configuration
        fidelity: Execution fidelity
        seed: Base seed
        sim: Simulation parameters
        timing_only: Build schedules and traces without materialising matrices

    Returns:
        ModelRun with per-layer traces, outputs and the timing check

    Raises:
        BudgetExceededError: If a FULL_NOISE run would exceed sim.max_pixel_trials
    """
    if dims.layers == 0:
        return ModelRun(layers=[])
    shapes = workload_plan(dims).shapes

    if fidelity == Fidelity.FULL_NOISE and not timing_only:
        required = pixel_trials(dims)
        if required > sim.max_pixel_trials:
            logger.warning(f"Refusing full_noise run: {required} pixel-trials")
            raise BudgetExceededError(required, sim.max_pixel_trials)

    layers = []
    if timing_only:
        traces = {s.name: schedule_trace(plan(s, config, sim), sim.bytes_per_value) for s in shapes}
        layers = [LayerRun(layer=layer, traces=traces) for layer in range(dims.layers)]
    else:
        for layer in range(dims.layers):
            traces, outputs = {}, {}
            for index, shape in enumerate(shapes):
                rng = make_rng(seed, layer, index)
                x = rng.uniform(-1.0, 1.0, size=(shape.in_dim, shape.batch))
                w = rng.uniform(-1.0, 1.0, size=(shape.out_dim, shape.in_dim))
                result = execute(
                    x, w, config, fidelity, derive_seed(seed, layer, index), sim, name=shape.name
                )
                traces[shape.name] = result.trace
                outputs[shape.name] = result.y
                if shape.name == "W_QKV":
                    outputs["attention"] = _attention_pattern(result.y, dims)
            layers.append(LayerRun(layer=layer, traces=traces, outputs=outputs))
            logger.debug(f"Layer {layer} done")

    compute = readout_time = 0.0
    for run in layers:
        for trace in run.traces.values():
            totals = trace_totals(trace)
            compute += totals.compute_time_s
            readout_time += totals.readout_time_s
    closed = system_delay(dims, config)
    check = PerfCheck(
        enumerated_delay_s=compute,
        closed_form_delay_s=closed,
        relative_error=abs(compute - closed) / closed if closed > 0 else 0.0,
        readout_time_s=readout_time,
        readout_to_illumination=readout_time / compute if compute > 0 else 0.0,
        attention_ops=attention_pattern_ops(dims),
    )
    return ModelRun(layers=layers, check=check)


def write_matrix(path: Union[str, Path], matrix: np.ndarray) -> Path:
    """
    Write a matrix as magic 'OENM', uint64 rows, uint64 cols, then little-endian
    float64 values in row-major order.
    """
    arr = np.asarray(matrix, dtype="<f8")
    if arr.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {arr.shape}")
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "wb") as f:
        f.write(_HEADER.pack(MATRIX_MAGIC, arr.shape[0], arr.shape[1]))
        f.write(np.ascontiguousarray(arr).tobytes(order="C"))
    return file_path


def read_matrix(path: Union[str, Path]) -> np.ndarray:
    """
    Read a matrix written by write_matrix.

    Raises:
        ValueError: On a bad magic number or a truncated payload
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: file too short for a matrix header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    payload = data[_HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise ValueError(f"{path}: expected {rows * cols * 8} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
