"""
Charge-level model of the two-tap demodulator pixel used as a MAC unit.

An input x in [-1, 1] is carried by the emitter intensity R = (x+1)/2, a weight w by
the gate control C = (w+1)/2. Photoelectrons collected during a sub-cycle are steered
to the two storage nodes in the proportions C and 1-C.

Sub-cycle schedules (light level -> node+ / node-):

    r=1  R:   g+ R C            / g- R (1-C)
    r=2  R:   g+ R C            / g- R (1-C)
         1-R: g+ (1-R)(1-C)     / g- (1-R) C
    r=4  the r=2 pair, then the same pair with the taps swapped between the
         storage nodes (tap- feeds node+, tap+ feeds node-)

The r=2 differential is (g+ + g-)/2 * x*w plus a mismatch bias (g+ - g-)/2 per
element; the swapped pair carries the opposite bias, so r=4 is bias-free.

Photo-responses are in units of the full-intensity sub-cycle charge, 2*eta_DM*eta_EM*E/hw,
where E is the average pulse energy (R = 1/2 on average).
"""

import logging
import math
import threading
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..hardware.snr import min_pulse_energy
from ..shared.config import ClockingParams, OpticalParams
from ..shared.data_types import SequenceMode
from ..shared.utils import ELECTRON_CHARGE_C, make_rng

logger = logging.getLogger(__name__)


class ClipCounter:
    """
    Thread-safe count of values the encoders had to clip.

    One counter belongs to one run; pass it to the encoders that should report into it.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += n

    def reset(self) -> None:
        with self._lock:
            self.count = 0


class PixelParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tap_gain_plus: float = 1.0
    tap_gain_minus: float = 1.0
    full_well_e: float = 1e7
    c_pix_f: float = 10e-15
    reset_reference_v: float = 0.0

    @classmethod
    def from_optics(cls, optics: OpticalParams) -> "PixelParams":
        return cls(
            tap_gain_plus=optics.tap_gain_plus,
            tap_gain_minus=optics.tap_gain_minus,
            full_well_e=optics.full_well_e,
            c_pix_f=optics.c_pix_f,
        )


class PixelState(BaseModel):
    """Charge held on the two storage nodes of one pixel."""
    model_config = ConfigDict(extra="forbid")

    q_plus_e: float = 0.0
    q_minus_e: float = 0.0
    saturated: bool = False
    mode: Optional[SequenceMode] = None
    elements: int = 0
    params: PixelParams = Field(default_factory=PixelParams)


class DriveSample(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    photo_response: float = Field(..., description="R in [0, 1]")
    gate_control: float = Field(..., description="C in [0, 1]")


class DriveBatch(NamedTuple):
    """Vectorised drive: photo-responses and gate controls for every element."""
    responses: np.ndarray
    gates: np.ndarray


class AdcReadout(NamedTuple):
    code: int
    value_v: float
    overflow: bool


def _encode(values, name: str, counter: Optional[ClipCounter]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError(f"NaN in {name}")
    out_of_range = np.abs(arr) > 1.0
    n_clipped = int(np.count_nonzero(out_of_range))
    if n_clipped:
        if counter is not None:
            counter.add(n_clipped)
        logger.warning(f"Clipped {n_clipped} {name} value(s) outside [-1, 1]")
        arr = np.clip(arr, -1.0, 1.0)
    return (arr + 1.0) / 2.0


def encode_input(x, counter: Optional[ClipCounter] = None):
    """
    Map an input value in [-1, 1] to the photo-response R = (x+1)/2.

    Out-of-range values are clipped with a warning and added to counter when one is given.

    Raises:
        ValueError: On NaN
    """
    out = _encode(x, "input", counter)
    return float(out) if out.ndim == 0 else out


def encode_weight(w, counter: Optional[ClipCounter] = None):
    """Map a weight in [-1, 1] to the gate control C = (w+1)/2."""
    out = _encode(w, "weight", counter)
    return float(out) if out.ndim == 0 else out


def decode(level):
    """Inverse of the encoders: 2*level - 1."""
    arr = np.asarray(level, dtype=np.float64)
    out = 2.0 * arr - 1.0
    return float(out) if out.ndim == 0 else out


def drive_batch(x: Sequence[float], w: Sequence[float], counter: Optional[ClipCounter] = None) -> DriveBatch:
    """Encode an input vector and a weight vector into a DriveBatch, clipping into counter."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    w_arr = np.atleast_1d(np.asarray(w, dtype=np.float64))
    if x_arr.shape != w_arr.shape:
        raise ValueError(f"Length mismatch: x has {x_arr.shape}, w has {w_arr.shape}")
    return DriveBatch(np.asarray(encode_input(x_arr, counter)), np.asarray(encode_weight(w_arr, counter)))


def _as_batch(inputs: Union[DriveBatch, Sequence[DriveSample]]) -> DriveBatch:
    if isinstance(inputs, DriveBatch):
        responses = np.asarray(inputs.responses, dtype=np.float64)
        gates = np.asarray(inputs.gates, dtype=np.float64)
    else:
        responses = np.array([s.photo_response for s in inputs], dtype=np.float64)
        gates = np.array([s.gate_control for s in inputs], dtype=np.float64)
    if responses.shape != gates.shape or responses.ndim != 1:
        raise ValueError(f"Drive arrays must be 1-D and equal length, got {responses.shape}, {gates.shape}")
    for name, arr in (("photo_response", responses), ("gate_control", gates)):
        if np.isnan(arr).any() or (arr < 0).any() or (arr > 1).any():
            raise ValueError(f"{name} values must lie in [0, 1]")
    return DriveBatch(responses, gates)


def unit_electrons(optics: OpticalParams, drive_energy_j: float) -> float:
    """Photoelectrons collected in one sub-cycle at full intensity (R = 1, C = 1, unit gain)."""
    return 2.0 * optics.eta_dm * optics.eta_em * drive_energy_j / optics.photon_j


def signal_gain_e(optics: OpticalParams, mode: SequenceMode, drive_energy_j: float) -> float:
    """
    Ideal differential electrons per unit product x*w (per unit R*C for r=1).

    Each complementary pair contributes one unit; r=4 runs two pairs.
    """
    pairs = 1 if mode.subcycles == 1 else mode.subcycles // 2
    return unit_electrons(optics, drive_energy_j) * pairs


def _subcycle_means(batch: DriveBatch, mode: SequenceMode, params: PixelParams, unit_e: float):
    """
    Mean collected electrons per (sub-cycle, node, element) and the tap gain applied.

    Returns:
        (means, gains): means has shape (r, 2, N); gains has shape (r, 2)
    """
    r_lvl, c_lvl = batch.responses, batch.gates
    g_p, g_m = params.tap_gain_plus, params.tap_gain_minus
    light = (r_lvl, 1.0 - r_lvl)
    straight = (
        (light[0] * c_lvl, light[0] * (1.0 - c_lvl)),
        (light[1] * (1.0 - c_lvl), light[1] * c_lvl),
    )
    if mode == SequenceMode.UNIPOLAR_SINGLE:
        fractions = [straight[0]]
        gains = [(g_p, g_m)]
    elif mode == SequenceMode.BIPOLAR_COMPLEMENTARY:
        fractions = list(straight)
        gains = [(g_p, g_m), (g_p, g_m)]
    else:
        fractions = list(straight) + list(straight)
        gains = [(g_p, g_m), (g_p, g_m), (g_m, g_p), (g_m, g_p)]
    means = unit_e * np.array([[f[0], f[1]] for f in fractions])
    return means, np.array(gains)


def _collect(
    means: np.ndarray,
    gains: np.ndarray,
    dark_mean: float,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """Electrons landing on node+ and node-: Poisson draws per (sub-cycle, tap, element) when rng is given."""
    if rng is not None:
        counts = rng.poisson(means).astype(np.float64)
        dark = rng.poisson(dark_mean, size=means.shape).astype(np.float64)
    else:
        counts = means
        dark = np.full(means.shape, dark_mean)
    collected = counts.sum(axis=2) * gains
    return (
        float(collected[:, 0].sum()) + float(dark[:, 0].sum()),
        float(collected[:, 1].sum()) + float(dark[:, 1].sum()),
    )


def accumulate(
    state: PixelState,
    inputs: Union[DriveBatch, Sequence[DriveSample]],
    mode: SequenceMode,
    optics: OpticalParams,
    clocking: ClockingParams,
    noise_on: bool = False,
    rng_seed: int = 0,
    stream: Tuple[int, ...] = (0, 0),
    drive_energy_j: Optional[float] = None,
) -> PixelState:
    """
    Accumulate a dot product on a pixel.

    Args:
        state: Current state (fresh or mid-accumulation with the same mode)
        inputs: Drive samples, one per vector element
        mode: Processing sequence
        optics: Optical parameters (efficiencies, photon energy, dark current)
        clocking: Clocking parameters (sub-cycle duration is 1/f_clk)
        noise_on: Draw Poisson counts per (element, sub-cycle, tap) instead of means
        rng_seed: Base seed
        stream: Stream coordinates (pixel index, trial index)
        drive_energy_j: Average pulse energy; None uses the SNR-optimal minimum for
            this vector length

    Returns:
        New PixelState
    """
    if state.mode is not None and state.mode != mode:
        raise ValueError(f"Pixel holds a {state.mode.full_name} accumulation; reset before using {mode.full_name}")
    batch = _as_batch(inputs)
    n_elements = batch.responses.shape[0]
    if n_elements == 0:
        return state.model_copy(update={"mode": mode})
    if drive_energy_j is None:
        drive_energy_j = min_pulse_energy(optics, clocking, n_elements).e_u_j

    params = state.params
    means, gains = _subcycle_means(batch, mode, params, unit_electrons(optics, drive_energy_j))
    dark_mean = optics.i_dark_a / clocking.f_clk_hz / ELECTRON_CHARGE_C

    plus_e, minus_e = _collect(means, gains, dark_mean, make_rng(rng_seed, *stream) if noise_on else None)
    q_plus = state.q_plus_e + plus_e
    q_minus = state.q_minus_e + minus_e

    saturated = state.saturated
    if q_plus > params.full_well_e or q_minus > params.full_well_e:
        logger.warning(
            f"Pixel saturated: q+={q_plus:.3e} e, q-={q_minus:.3e} e, full well {params.full_well_e:.3e} e"
        )
        q_plus = min(q_plus, params.full_well_e)
        q_minus = min(q_minus, params.full_well_e)
        saturated = True

    return state.model_copy(update={
        "q_plus_e": q_plus,
        "q_minus_e": q_minus,
        "saturated": saturated,
        "mode": mode,
        "elements": state.elements + n_elements,
    })


class BlockCharges(NamedTuple):
    """Node charges of a block of fresh pixels, shape (weight rows, input columns)."""
    q_plus_e: np.ndarray
    q_minus_e: np.ndarray
    saturated: np.ndarray


def accumulate_block(
    levels: np.ndarray,
    gates: np.ndarray,
    mode: SequenceMode,
    optics: OpticalParams,
    clocking: ClockingParams,
    drive_energy_j: float,
    noise_on: bool = False,
    rng_seed: int = 0,
    row_ids: Optional[Sequence[int]] = None,
    col_ids: Optional[Sequence[int]] = None,
) -> BlockCharges:
    """
    Accumulate a block of fresh pixels: pixel (a, b) integrates gates[a] against levels[:, b].

    Gives the charges `accumulate` gives pixel by pixel. Noiseless blocks are computed
    with matrix products. With noise on, pixel (a, b) draws from the stream
    (row_ids[a], col_ids[b]), the same stream `accumulate` uses for that pixel.

    Args:
        levels: Photo-responses R, shape (N, columns)
        gates: Gate controls C, shape (rows, N)
        mode: Processing sequence
        optics: Optical parameters
        clocking: Clocking parameters
        drive_energy_j: Average pulse energy
        noise_on: Draw Poisson counts
        rng_seed: Base seed
        row_ids: Stream index of each gate row (default 0..rows-1)
        col_ids: Stream index of each level column (default 0..columns-1)

    Returns:
        BlockCharges clamped at full well
    """
    levels = np.asarray(levels, dtype=np.float64)
    gates = np.asarray(gates, dtype=np.float64)
    if levels.ndim != 2 or gates.ndim != 2 or gates.shape[1] != levels.shape[0]:
        raise ValueError(f"Block shapes do not chain: gates {gates.shape}, levels {levels.shape}")
    params = PixelParams.from_optics(optics)
    unit_e = unit_electrons(optics, drive_energy_j)
    dark_mean = optics.i_dark_a / clocking.f_clk_hz / ELECTRON_CHARGE_C
    n_rows, n_cols = gates.shape[0], levels.shape[1]
    row_ids = list(range(n_rows)) if row_ids is None else list(row_ids)
    col_ids = list(range(n_cols)) if col_ids is None else list(col_ids)

    if noise_on:
        q_plus = np.empty((n_rows, n_cols))
        q_minus = np.empty((n_rows, n_cols))
        for a in range(n_rows):
            for b in range(n_cols):
                batch = DriveBatch(levels[:, b], gates[a])
                means, gains = _subcycle_means(batch, mode, params, unit_e)
                q_plus[a, b], q_minus[a, b] = _collect(means, gains, dark_mean, make_rng(rng_seed, row_ids[a], col_ids[b]))
    else:
        n = levels.shape[0]
        rc = gates @ levels
        sum_r = levels.sum(axis=0)[None, :]
        sum_c = gates.sum(axis=1)[:, None]
        pair = ((rc, sum_r - rc), (n - sum_r - sum_c + rc, sum_c - rc))
        g_p, g_m = params.tap_gain_plus, params.tap_gain_minus
        if mode == SequenceMode.UNIPOLAR_SINGLE:
            plus, minus = g_p * pair[0][0], g_m * pair[0][1]
        else:
            plus = g_p * (pair[0][0] + pair[1][0])
            minus = g_m * (pair[0][1] + pair[1][1])
            if mode == SequenceMode.SYMMETRIZED_BIPOLAR:
                plus, minus = plus + g_m * (pair[0][0] + pair[1][0]), minus + g_p * (pair[0][1] + pair[1][1])
        dark_e = mode.subcycles * n * dark_mean
        q_plus = unit_e * plus + dark_e
        q_minus = unit_e * minus + dark_e

    saturated = (q_plus > params.full_well_e) | (q_minus > params.full_well_e)
    if saturated.any():
        q_plus = np.minimum(q_plus, params.full_well_e)
        q_minus = np.minimum(q_minus, params.full_well_e)
    return BlockCharges(q_plus, q_minus, saturated)


def readout_block(
    charges: BlockCharges,
    mode: SequenceMode,
    c_pix_f: float,
    adc_bits: int,
    adc_range_v: float,
    read_noise_e: float = 0.0,
    adc_noise_lsb: float = 0.0,
    rng_seed: int = 0,
    row_ids: Optional[Sequence[int]] = None,
    col_ids: Optional[Sequence[int]] = None,
):
    """
    `readout` over a block. Optional noise for pixel (a, b) comes from the stream
    (row_ids[a], col_ids[b], 1).

    Returns:
        (codes, dequantized volts, overflow mask), each shaped like the block
    """
    signal_e = charges.q_plus_e.copy() if mode == SequenceMode.UNIPOLAR_SINGLE else charges.q_plus_e - charges.q_minus_e
    lsb = adc_lsb(adc_bits, adc_range_v)
    volts = signal_e * ELECTRON_CHARGE_C / c_pix_f
    if read_noise_e > 0 or adc_noise_lsb > 0:
        n_rows, n_cols = signal_e.shape
        row_ids = list(range(n_rows)) if row_ids is None else list(row_ids)
        col_ids = list(range(n_cols)) if col_ids is None else list(col_ids)
        nodes = 1 if mode == SequenceMode.UNIPOLAR_SINGLE else 2
        for a in range(n_rows):
            for b in range(n_cols):
                rng = make_rng(rng_seed, row_ids[a], col_ids[b], 1)
                sig = float(signal_e[a, b])
                if read_noise_e > 0:
                    sig += float(rng.normal(0.0, read_noise_e * math.sqrt(nodes)))
                v = sig * ELECTRON_CHARGE_C / c_pix_f
                if adc_noise_lsb > 0:
                    v += float(rng.normal(0.0, adc_noise_lsb * lsb))
                volts[a, b] = v
    return quantize_adc(volts, adc_bits, adc_range_v)


def differential(state: PixelState) -> float:
    """
    Signal charge in electrons: q+ - q- for bipolar sequences, q+ alone for r=1.

    An r=4 run integrates two complementary pairs, so its differential is
    (g+ + g-) * x.w in sub-cycle units, twice the per-pair value; see per_pair_differential.
    """
    if state.mode == SequenceMode.UNIPOLAR_SINGLE:
        return state.q_plus_e
    return state.q_plus_e - state.q_minus_e


def per_pair_differential(state: PixelState) -> float:
    """
    Differential per complementary pair.

    For r=4 this is (g+ + g-)/2 times the ideal r=2 differential, with no mismatch bias.
    For r=1 and r=2 it equals `differential`.
    """
    pairs = 2 if state.mode == SequenceMode.SYMMETRIZED_BIPOLAR else 1
    return differential(state) / pairs


def adc_lsb(adc_bits: int, adc_range: float) -> float:
    """Step of the mid-tread quantizer: full scale maps to code 2^(b-1)-1."""
    if adc_bits < 2:
        raise ValueError(f"adc_bits must be >= 2, got {adc_bits}")
    if not adc_range > 0:
        raise ValueError(f"adc_range must be > 0, got {adc_range}")
    return adc_range / (2 ** (adc_bits - 1) - 1)


def quantize_adc(values, adc_bits: int, adc_range: float):
    """
    Mid-tread uniform quantizer over [-adc_range, adc_range].

    Args:
        values: Scalar or array in the same unit as adc_range
        adc_bits: ADC resolution b
        adc_range: Positive full-scale value

    Returns:
        (codes, dequantized values, overflow mask); codes lie in [-2^(b-1), 2^(b-1)-1]
    """
    lsb = adc_lsb(adc_bits, adc_range)
    raw = np.rint(np.asarray(values, dtype=np.float64) / lsb)
    lo, hi = -(2 ** (adc_bits - 1)), 2 ** (adc_bits - 1) - 1
    codes = np.clip(raw, lo, hi)
    overflow = raw != codes
    return codes.astype(np.int64), codes * lsb, overflow


def readout(
    state: PixelState,
    adc_bits: int,
    adc_range_v: float,
    read_noise_e: float = 0.0,
    adc_noise_lsb: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> AdcReadout:
    """
    Convert the differential charge to a voltage over C_pix and quantize it.

    Args:
        state: Accumulated pixel
        adc_bits: ADC resolution b
        adc_range_v: ADC full scale in volts
        read_noise_e: Optional Gaussian kTC/read noise per node, electrons rms
        adc_noise_lsb: Optional Gaussian ADC input noise, LSB rms
        rng: Generator for the optional noise terms

    Returns:
        AdcReadout(code, value_v, overflow)
    """
    signal_e = differential(state)
    if (read_noise_e > 0 or adc_noise_lsb > 0) and rng is None:
        raise ValueError("readout noise requires an rng")
    if read_noise_e > 0:
        nodes = 1 if state.mode == SequenceMode.UNIPOLAR_SINGLE else 2
        signal_e += float(rng.normal(0.0, read_noise_e * math.sqrt(nodes)))
    volts = signal_e * ELECTRON_CHARGE_C / state.params.c_pix_f
    if adc_noise_lsb > 0:
        volts += float(rng.normal(0.0, adc_noise_lsb * adc_lsb(adc_bits, adc_range_v)))
    codes, values, overflow = quantize_adc(volts, adc_bits, adc_range_v)
    if bool(overflow):
        logger.debug(f"ADC overflow: {volts:.4e} V outside +/-{adc_range_v:.4e} V")
    return AdcReadout(code=int(codes), value_v=float(values), overflow=bool(overflow))


def reset(state: PixelState) -> PixelState:
    """Return both storage nodes to the reference level and clear saturation."""
    return PixelState(params=state.params)


def mac_exact(x: Sequence[float], w: Sequence[float]) -> float:
    """
    Reference dot product with compensated summation.

    Raises:
        ValueError: On length mismatch
    """
    x_list = [float(v) for v in np.ravel(np.asarray(x, dtype=np.float64))]
    w_list = [float(v) for v in np.ravel(np.asarray(w, dtype=np.float64))]
    if len(x_list) != len(w_list):
        raise ValueError(f"Length mismatch: {len(x_list)} vs {len(w_list)}")
    return math.fsum(a * b for a, b in zip(x_list, w_list))
