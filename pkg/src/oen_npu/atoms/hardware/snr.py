"""
Minimal pulse energy and SNR bound.

The analog dot product must be quantization-limited: the ADC quantization error of
the collected signal must be at least the shot noise of signal plus dark charge.
Solving that condition for the average emitter pulse energy gives E_u = epsilon*delta,
with a dark-negligible and a dark-dominated limit separated by the threshold dark
current I_th.
"""

import logging
import math
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..shared.config import ClockingParams, OpticalParams
from ..shared.data_types import SnrRegime
from ..shared.utils import ELECTRON_CHARGE_C

logger = logging.getLogger(__name__)

# I_dark within this factor of I_th counts as the crossover regime
CROSSOVER_BAND = 10.0

# rounds the closed-form minimum up so floating-point error never lands below the bound
ROUND_UP = 1.0 + 1e-12


class SnrOperatingPoint(BaseModel):
    """Currents and timing of one demodulator pixel during a dot product."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    t_expo_s: float = Field(..., description="Exposure time N_vec*r/f_clk")
    n_vec: int
    r_subcycles: int
    adc_bits: int
    i_avg_a: float
    i_max_a: float
    i_min_a: float
    i_dark_a: float
    alpha_em: float
    photon_energy_j: float
    eta_dm: float
    eta_em: float


class PulseEnergy(BaseModel):
    """Result of min_pulse_energy."""
    model_config = ConfigDict(frozen=True)

    e_u_j: float = Field(..., description="Minimal average unit pulse energy")
    regime: SnrRegime
    epsilon_j: float = Field(..., description="Prefactor of the branch that set e_u_j")
    delta: float = Field(..., description="Vector-length factor of that branch")
    i_th_a: float
    exact_e_u_j: float = Field(..., description="Exact root of the SNR equality with dark current")


def _levels(adc_bits: int) -> int:
    return 2 ** adc_bits - 1


def _check_vec(n_vec: int) -> None:
    if n_vec < 1:
        raise ValueError(f"N_vec must be >= 1, got {n_vec}")


def exposure_time(clocking: ClockingParams, n_vec: int) -> float:
    """T_expo = N_vec * r / f_clk."""
    return n_vec * clocking.r_subcycles / clocking.f_clk_hz


def snr_condition_holds(op_point: SnrOperatingPoint) -> Tuple[bool, float]:
    """
    Evaluate the quantization-versus-shot-noise condition.

    LHS = (2*I_avg*alpha*T/q) / (sqrt(12)*(2^b - 1)),
    RHS = sqrt((I_avg*alpha + I_dark)*T/q).

    Args:
        op_point: Operating point

    Returns:
        (LHS >= RHS, LHS/RHS). With no signal and no dark current the condition
        degenerates to 0 >= 0, reported as (True, 1.0).

    Raises:
        ValueError: If the exposure time is not positive
    """
    if op_point.t_expo_s <= 0:
        raise ValueError(f"T_expo must be > 0, got {op_point.t_expo_s}")
    q = ELECTRON_CHARGE_C
    signal_e = op_point.i_avg_a * op_point.alpha_em * op_point.t_expo_s / q
    lhs = 2 * signal_e / (math.sqrt(12) * _levels(op_point.adc_bits))
    rhs = math.sqrt((op_point.i_avg_a * op_point.alpha_em + op_point.i_dark_a) * op_point.t_expo_s / q)
    if rhs == 0:
        return (lhs >= 0, 1.0 if lhs == 0 else math.inf)
    ratio = lhs / rhs
    return (lhs >= rhs, ratio)


def threshold_dark_current(clocking: ClockingParams, n_vec: int) -> float:
    """
    Threshold dark current I_th = 3q(2^b - 1)^2 / (4 * f_clk^-1 * N * r).

    Args:
        clocking: Clocking parameters
        n_vec: Vector length

    Returns:
        I_th in amperes
    """
    _check_vec(n_vec)
    k = _levels(clocking.adc_bits)
    return 3 * ELECTRON_CHARGE_C * k * k * clocking.f_clk_hz / (4 * n_vec * clocking.r_subcycles)


def _dark_negligible(optics: OpticalParams, clocking: ClockingParams, n_vec: int) -> Tuple[float, float]:
    k = _levels(clocking.adc_bits)
    epsilon = 3 * optics.photon_j * k * k / (optics.eta_dm * optics.eta_em)
    delta = 1.0 / (n_vec * clocking.r_subcycles)
    return epsilon, delta


def _dark_dominated(optics: OpticalParams, clocking: ClockingParams, n_vec: int) -> Tuple[float, float]:
    k = _levels(clocking.adc_bits)
    epsilon = (
        3 * optics.photon_j / (optics.eta_dm * optics.eta_em)
        * math.sqrt(optics.i_dark_a / (3 * ELECTRON_CHARGE_C * clocking.f_clk_hz))
        * k
    )
    delta = 1.0 / math.sqrt(n_vec * clocking.r_subcycles)
    return epsilon, delta


def exact_pulse_energy(optics: OpticalParams, clocking: ClockingParams, n_vec: int) -> float:
    """
    Exact minimal pulse energy including dark current.

    With n signal electrons and d dark electrons over the exposure, the equality
    n/(sqrt(3)*K) = sqrt(n + d) is quadratic in n:
    n = (3K^2 + sqrt(9K^4 + 12K^2*d)) / 2.

    Args:
        optics: Optical parameters
        clocking: Clocking parameters
        n_vec: Vector length

    Returns:
        E_u in joules
    """
    _check_vec(n_vec)
    k = _levels(clocking.adc_bits)
    dark_e = optics.i_dark_a * exposure_time(clocking, n_vec) / ELECTRON_CHARGE_C
    three_k2 = 3.0 * k * k
    signal_e = (three_k2 + math.sqrt(three_k2 * three_k2 + 4 * three_k2 * dark_e)) / 2
    e_u = signal_e * optics.photon_j / (optics.eta_dm * optics.eta_em * n_vec * clocking.r_subcycles)
    return e_u * ROUND_UP


def min_pulse_energy(optics: OpticalParams, clocking: ClockingParams, n_vec: int) -> PulseEnergy:
    """
    Minimal average unit pulse energy E_u = epsilon * delta.

    The regime is chosen by comparing I_dark with I_th. Within a factor of
    CROSSOVER_BAND of I_th the larger of the two limiting branches is returned and
    the regime is flagged as crossover.

    Args:
        optics: Optical parameters
        clocking: Clocking parameters
        n_vec: Vector length N

    Returns:
        PulseEnergy
    """
    _check_vec(n_vec)
    i_th = threshold_dark_current(clocking, n_vec)
    eps_n, delta_n = _dark_negligible(optics, clocking, n_vec)
    eps_d, delta_d = _dark_dominated(optics, clocking, n_vec)
    negligible = eps_n * delta_n
    dominated = eps_d * delta_d

    if optics.i_dark_a * CROSSOVER_BAND < i_th:
        regime, epsilon, delta, e_u = SnrRegime.DARK_NEGLIGIBLE, eps_n, delta_n, negligible
    elif optics.i_dark_a > i_th * CROSSOVER_BAND:
        regime, epsilon, delta, e_u = SnrRegime.DARK_DOMINATED, eps_d, delta_d, dominated
    else:
        regime = SnrRegime.CROSSOVER
        if negligible >= dominated:
            epsilon, delta, e_u = eps_n, delta_n, negligible
        else:
            epsilon, delta, e_u = eps_d, delta_d, dominated
        logger.debug(
            f"I_dark={optics.i_dark_a:.3e} A is within {CROSSOVER_BAND:g}x of I_th={i_th:.3e} A "
            f"at N={n_vec}; using the larger branch"
        )

    return PulseEnergy(
        e_u_j=e_u * ROUND_UP,
        regime=regime,
        epsilon_j=epsilon,
        delta=delta,
        i_th_a=i_th,
        exact_e_u_j=exact_pulse_energy(optics, clocking, n_vec),
    )


def snr_operating_point(
    optics: OpticalParams, clocking: ClockingParams, n_vec: int, e_u_j: float
) -> SnrOperatingPoint:
    """
    Build the operating point produced by an average pulse energy.

    Uses I_avg*alpha = (q/hw) * eta_DM * eta_EM * E_u * f_clk, with the drive swinging
    between I_min = 0 and I_max = 2*I_avg.

    Args:
        optics: Optical parameters
        clocking: Clocking parameters
        n_vec: Vector length
        e_u_j: Average unit pulse energy

    Returns:
        SnrOperatingPoint
    """
    _check_vec(n_vec)
    if e_u_j < 0:
        raise ValueError(f"e_u_j must be >= 0, got {e_u_j}")
    i_avg_alpha = (
        ELECTRON_CHARGE_C / optics.photon_j * optics.eta_dm * optics.eta_em * e_u_j * clocking.f_clk_hz
    )
    i_avg = i_avg_alpha / optics.alpha_em
    return SnrOperatingPoint(
        t_expo_s=exposure_time(clocking, n_vec),
        n_vec=n_vec,
        r_subcycles=clocking.r_subcycles,
        adc_bits=clocking.adc_bits,
        i_avg_a=i_avg,
        i_max_a=2 * i_avg,
        i_min_a=0.0,
        i_dark_a=optics.i_dark_a,
        alpha_em=optics.alpha_em,
        photon_energy_j=optics.photon_j,
        eta_dm=optics.eta_dm,
        eta_em=optics.eta_em,
    )
