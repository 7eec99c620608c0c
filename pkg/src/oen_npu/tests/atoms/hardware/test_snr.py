"""
Tests for the minimal pulse energy and the SNR condition.
"""

import numpy as np
import pytest

from oen_npu.atoms.hardware.snr import (
    exact_pulse_energy,
    exposure_time,
    min_pulse_energy,
    snr_condition_holds,
    snr_operating_point,
    threshold_dark_current,
)
from oen_npu.atoms.shared.config import ClockingParams, OpticalParams
from oen_npu.atoms.shared.data_types import SnrRegime

CLOCKING = ClockingParams()
DARKLESS = OpticalParams(i_dark_a=0.0)


def test_threshold_dark_current():
    """Test I_th of about 78 nA at N=100 and 0.78 nA at N=10^4."""
    assert threshold_dark_current(CLOCKING, 100) == pytest.approx(78e-9, rel=0.01)
    assert threshold_dark_current(CLOCKING, 10_000) == pytest.approx(0.78e-9, rel=0.01)
    with pytest.raises(ValueError):
        threshold_dark_current(CLOCKING, 0)


def test_exposure_time():
    """Test T_expo = N r / f_clk."""
    assert exposure_time(CLOCKING, 12288) == pytest.approx(12288 * 2 / 2e9)


def test_dark_negligible_closure():
    """Test that the bound closes with I_dark = 0 across vector lengths."""
    for n in np.unique(np.logspace(0, 5, 100).astype(int)):
        pulse = min_pulse_energy(DARKLESS, CLOCKING, int(n))
        assert pulse.regime == SnrRegime.DARK_NEGLIGIBLE
        holds, ratio = snr_condition_holds(snr_operating_point(DARKLESS, CLOCKING, int(n), pulse.e_u_j))
        assert holds
        assert ratio == pytest.approx(1.0, abs=1e-9)


def test_energy_scales_inverse_with_n():
    """Test E_u proportional to 1/N in the dark-negligible regime."""
    e_100 = min_pulse_energy(DARKLESS, CLOCKING, 100).e_u_j
    e_1000 = min_pulse_energy(DARKLESS, CLOCKING, 1000).e_u_j
    assert e_100 / e_1000 == pytest.approx(10.0)


def test_dark_dominated_regime():
    """Test the 1/sqrt(N) branch when I_dark is far above I_th."""
    optics = OpticalParams(i_dark_a=1e-6)
    e_1e4 = min_pulse_energy(optics, CLOCKING, 10_000)
    e_4e4 = min_pulse_energy(optics, CLOCKING, 40_000)
    assert e_1e4.regime == SnrRegime.DARK_DOMINATED
    assert e_1e4.e_u_j / e_4e4.e_u_j == pytest.approx(2.0)
    assert e_1e4.delta == pytest.approx(1 / np.sqrt(20_000))


def test_crossover_regime_takes_larger_branch():
    """Test that I_dark near I_th is flagged and the larger branch is used."""
    i_th = threshold_dark_current(CLOCKING, 1000)
    pulse = min_pulse_energy(OpticalParams(i_dark_a=i_th), CLOCKING, 1000)
    assert pulse.regime == SnrRegime.CROSSOVER
    assert pulse.e_u_j >= min_pulse_energy(DARKLESS, CLOCKING, 1000).e_u_j


@pytest.mark.parametrize("i_dark", [0.0, 1e-12, 1e-9, 1e-7, 1e-5])
def test_exact_energy_always_closes(i_dark):
    """Test that the exact root satisfies the condition and bounds both branches from above."""
    optics = OpticalParams(i_dark_a=i_dark)
    for n in (10, 1000, 12288):
        pulse = min_pulse_energy(optics, CLOCKING, n)
        assert pulse.exact_e_u_j >= pulse.e_u_j * (1 - 1e-9)
        assert pulse.exact_e_u_j == exact_pulse_energy(optics, CLOCKING, n)
        holds, _ = snr_condition_holds(snr_operating_point(optics, CLOCKING, n, pulse.exact_e_u_j))
        assert holds


def test_more_bits_need_more_energy():
    """Test E_u growing with the ADC resolution."""
    e_8 = min_pulse_energy(DARKLESS, CLOCKING, 1000).e_u_j
    e_10 = min_pulse_energy(DARKLESS, ClockingParams(adc_bits=10), 1000).e_u_j
    assert e_10 / e_8 == pytest.approx((1023 / 255) ** 2)


def test_snr_fails_below_bound():
    """Test that half the minimal energy violates the condition."""
    pulse = min_pulse_energy(DARKLESS, CLOCKING, 1000)
    holds, ratio = snr_condition_holds(snr_operating_point(DARKLESS, CLOCKING, 1000, pulse.e_u_j / 2))
    assert not holds
    assert ratio == pytest.approx(np.sqrt(0.5))


def test_degenerate_operating_point():
    """Test zero signal with zero dark current."""
    assert snr_condition_holds(snr_operating_point(DARKLESS, CLOCKING, 10, 0.0)) == (True, 1.0)
    with pytest.raises(ValueError):
        snr_operating_point(DARKLESS, CLOCKING, 10, -1.0)
