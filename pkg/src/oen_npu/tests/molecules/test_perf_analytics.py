"""
Tests for the closed-form performance model.
"""

import pytest

from oen_npu.atoms.shared.config import HardwareConfig
from oen_npu.atoms.shared.data_types import PowerForm
from oen_npu.atoms.shared.presets import hardware_preset, workload_preset
from oen_npu.molecules.perf_analytics import (
    SWEEP_COLUMNS,
    area_efficiency,
    calibrate_table1,
    closed_form_delay,
    compare_table1,
    computing_speed,
    perf_report,
    power_efficiency,
    repeat_counts,
    sweep,
    system_area,
    system_delay,
    system_power,
    with_array_size,
)

GPT3 = workload_preset("gpt3")
TABLE1 = hardware_preset("table1")
CT_RANGE = [512, 1024, 2048, 4096, 8192]
CW_RANGE = [768, 1536, 3072, 6144, 12288]


def test_computing_speed():
    """Test gamma = 2 f_clk / r * C_T * C_W, about 12.6 POPS for the default array."""
    assert computing_speed(TABLE1) == 2 * 2e9 / 2 * 2048 * 3072
    assert computing_speed(TABLE1) == pytest.approx(1.2583e16, rel=1e-4)


def test_repeat_counts():
    """Test the temporal repeats of the GPT-3 matrices on a 2048x3072 array."""
    assert repeat_counts(GPT3, TABLE1) == {
        "R_T": 1, "R_W:W_QKV": 12, "R_W:W_output": 4, "R_W:W_up": 16, "R_W:W_down": 4,
    }


def test_delay_matches_closed_form():
    """Test the 56.6 ms GPT-3 delay by enumeration and by closed form."""
    delay = system_delay(GPT3, TABLE1)
    assert delay == 113_246_208 / 2e9
    assert delay == pytest.approx(closed_form_delay(GPT3, TABLE1), rel=1e-12)
    assert delay * 1e3 == pytest.approx(56.62, abs=0.01)


def test_delay_rounds_up_partial_tiles():
    """Test that an array wider than the token count idles rows but costs a full pass."""
    config = with_array_size(TABLE1, 4096, 3072)
    assert system_delay(GPT3, config) == system_delay(GPT3, TABLE1)
    assert perf_report(GPT3, config).idle_rows == 2048


def test_approx_efficiency_and_lumped_energy():
    """Test the approximate efficiency of about 74 TOPS/W, a 13.5 fJ lumped energy."""
    eff = power_efficiency(GPT3, TABLE1, PowerForm.APPROX)
    assert eff == pytest.approx(74e12, rel=0.001)
    assert 2 / 2 / eff == pytest.approx(13.51e-15, rel=0.001)


def test_full_power():
    """Test the full power expression: about 171 W and 73.6 TOPS/W."""
    power = system_power(GPT3, TABLE1, PowerForm.FULL)
    assert power.power_w == pytest.approx(171.0, rel=0.005)
    assert power.breakdown["hbm_read_weights"] == 0.0
    assert power.breakdown["emitter"] > 0
    assert power.breakdown["adc"] > power.breakdown["emitter"]
    assert power_efficiency(GPT3, TABLE1, PowerForm.FULL) == pytest.approx(73.6e12, rel=0.005)
    approx = system_power(GPT3, TABLE1, PowerForm.APPROX)
    assert approx.power_w < power.power_w
    assert approx.breakdown["emitter"] == 0.0


def test_hbm_energy_included_on_request():
    """Test that exclude_hbm=False adds the read and write terms."""
    config = TABLE1.model_copy(update={"energy": TABLE1.energy.model_copy(update={"exclude_hbm": False})})
    assert system_power(GPT3, config).breakdown["hbm_read_weights"] > 0
    assert system_power(GPT3, config).power_w > system_power(GPT3, TABLE1).power_w


def test_area():
    """Test the 654 mm^2 system area and its pixel/DAC split."""
    assert system_area(TABLE1) == pytest.approx(654.0, rel=1e-5)
    assert area_efficiency(TABLE1) == pytest.approx(computing_speed(TABLE1) / system_area(TABLE1), rel=1e-12)


def test_perf_report():
    """Test the combined report for GPT-3 on the default array."""
    report = perf_report(GPT3, TABLE1)
    assert report.tasks_ops == pytest.approx(7.1249e14, rel=1e-4)
    assert report.handling_w_mm2 == pytest.approx(0.2615, rel=0.005)
    assert report.idle_rows == 0
    assert report.cooling_ok is None
    assert len(report.sweep_row()) == len(SWEEP_COLUMNS)
    assert report.to_dict()["power_form"] == "full"


def test_cooling_threshold():
    """Test the report-only power-handling check."""
    config = TABLE1.model_copy(update={"cooling_threshold_w_mm2": 0.3})
    assert perf_report(GPT3, config).cooling_ok is True
    config = TABLE1.model_copy(update={"cooling_threshold_w_mm2": 0.1})
    assert perf_report(GPT3, config).cooling_ok is False


def test_calibration_closes():
    """Test that the back-solved config reproduces the target efficiency and area."""
    calibration = calibrate_table1(HardwareConfig(), target_eff_ops_s_w=80e12, target_area_mm2=700.0)
    calibrated = calibration.config
    assert power_efficiency(GPT3, calibrated, PowerForm.APPROX) == pytest.approx(80e12, rel=1e-9)
    assert system_area(calibrated) == pytest.approx(700.0, rel=1e-9)
    assert calibration.derivation["label"] == "DERIVED"
    assert calibration.derivation["e_dm_j"] == 2e-15


def test_calibrated_operating_point():
    """Test the GPT-3 report on the calibrated defaults: 74 TOPS/W, 172 W, 654 mm^2, 19 TOPS/mm^2, 262 mW/mm^2."""
    report = perf_report(GPT3, calibrate_table1(HardwareConfig()).config)
    assert report.eff_ops_s_w == pytest.approx(74e12, rel=0.02)
    assert report.power_w == pytest.approx(172.0, rel=0.02)
    assert report.area_mm2 == pytest.approx(654.0, rel=0.005)
    assert report.eff_ops_s_mm2 == pytest.approx(19e12, rel=0.02)
    assert report.handling_w_mm2 == pytest.approx(0.262, rel=0.03)


def test_calibration_of_defaults_is_stable():
    """Test that calibrating the shipped values changes them very little."""
    calibrated = calibrate_table1(HardwareConfig()).config
    assert calibrated.area.a_dac_um2 == pytest.approx(4854.4, rel=1e-4)
    assert calibrated.selected_dac().e_fixed_j == pytest.approx(4.25984e-11, rel=0.01)


def test_calibration_rejects_impossible_targets():
    """Test targets that would need negative energy or area."""
    with pytest.raises(ValueError):
        calibrate_table1(HardwareConfig(), target_eff_ops_s_w=1e18)
    with pytest.raises(ValueError):
        calibrate_table1(HardwareConfig(), target_area_mm2=100.0)


def test_sweep_trends():
    """Test the 5x5 design-space trends of the two efficiencies."""
    reports = sweep(GPT3, TABLE1, CT_RANGE, CW_RANGE, threads=4)
    assert [(r.rows, r.cols) for r in reports] == [(ct, cw) for ct in CT_RANGE for cw in CW_RANGE]
    grid = [reports[i * 5:(i + 1) * 5] for i in range(5)]
    for row in grid:
        # HBM is excluded, so eta_p does not depend on C_W
        assert [r.eff_ops_s_w for r in row] == pytest.approx([row[0].eff_ops_s_w] * 5, rel=1e-9)
        assert all(b.eff_ops_s_mm2 > a.eff_ops_s_mm2 for a, b in zip(row, row[1:]))
    for j in range(5):
        column = [grid[i][j] for i in range(5)]
        assert all(b.eff_ops_s_w >= a.eff_ops_s_w for a, b in zip(column, column[1:]))
        assert all(b.eff_ops_s_mm2 > a.eff_ops_s_mm2 for a, b in zip(column, column[1:]))


def test_sweep_rejects_empty_range():
    """Test that an empty sweep axis is an error."""
    with pytest.raises(ValueError):
        sweep(GPT3, TABLE1, [], [3072])


def test_compare_table1():
    """Test the comparison rows against one and one hundred T4 cards."""
    rows = compare_table1(perf_report(GPT3, TABLE1))
    assert [r["system"] for r in rows] == ["OEN", "Nvidia T4 x1", "Nvidia T4 x100"]
    assert rows[0]["speed_tops"] == pytest.approx(12582.9, rel=1e-5)
    assert rows[0]["delay_ms"] == pytest.approx(56.62, abs=0.01)
    assert rows[2]["delay_ms"] == pytest.approx(54.77)
    assert rows[2]["power_w"] == pytest.approx(40625.0)
