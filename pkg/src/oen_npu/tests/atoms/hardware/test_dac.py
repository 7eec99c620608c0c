"""
Tests for the DAC energy and area models.
"""

import pytest

from oen_npu.atoms.hardware.dac import (
    crossover_pixels,
    dac_area,
    dac_energy_per_pixel,
    dac_energy_total,
    effective_edac_dm,
    scaling_table,
)
from oen_npu.atoms.shared.config import DacModel, EnergyParams, HardwareConfig, default_dac_models
from oen_npu.atoms.shared.data_types import DacKind

MODELS = default_dac_models()
N_VALUES = [1, 10, 100, 1000, 2048, 10000]


@pytest.mark.parametrize("name", ["rdac_100k", "rdac_1m"])
def test_rdac_scaling(name):
    """Test that RDAC energy is linear with constant per-pixel energy and growing area."""
    model = MODELS[name]
    per_pixel = [dac_energy_per_pixel(model, n) for n in N_VALUES]
    assert per_pixel == pytest.approx([per_pixel[0]] * len(N_VALUES))
    areas = [dac_area(model, n) for n in N_VALUES]
    assert all(b > a for a, b in zip(areas, areas[1:]))


@pytest.mark.parametrize("name", ["idac_100k", "idac_1m"])
def test_idac_scaling(name):
    """Test that IDAC per-pixel energy falls with load and area is constant."""
    model = MODELS[name]
    per_pixel = [dac_energy_per_pixel(model, n) for n in N_VALUES]
    assert all(b < a for a, b in zip(per_pixel, per_pixel[1:]))
    assert {dac_area(model, n) for n in N_VALUES} == {model.a_fixed_um2}


def test_lower_impedance_costs_more():
    """Test that the 100 kOhm load needs more energy than 1 MOhm for both kinds."""
    for kind in ("rdac", "idac"):
        assert dac_energy_total(MODELS[f"{kind}_100k"], 1000) > dac_energy_total(MODELS[f"{kind}_1m"], 1000)


def test_crossover():
    """Test the pixel count above which the IDAC wins."""
    n_1m = crossover_pixels(MODELS["rdac_1m"], MODELS["idac_1m"])
    assert n_1m == 4485
    assert dac_energy_total(MODELS["idac_1m"], n_1m) < dac_energy_total(MODELS["rdac_1m"], n_1m)
    assert dac_energy_total(MODELS["idac_1m"], n_1m - 1) >= dac_energy_total(MODELS["rdac_1m"], n_1m - 1)
    assert crossover_pixels(MODELS["rdac_100k"], MODELS["idac_100k"]) == 449


def test_crossover_edge_cases():
    """Test an IDAC that always wins and one that never does."""
    cheap = DacModel(kind=DacKind.IDAC, load_impedance_ohm=1e6, e_per_pixel_j=1e-15)
    assert crossover_pixels(MODELS["rdac_1m"], cheap) == 1
    steep = DacModel(kind=DacKind.IDAC, load_impedance_ohm=1e6, e_fixed_j=1e-12, e_per_pixel_j=20e-15)
    assert crossover_pixels(MODELS["rdac_1m"], steep) is None


def test_effective_edac_dm():
    """Test the IDAC optimisation divisor on the demodulator DAC."""
    expected = (4.25984e-11 + 0.5e-15 * 2048) / 1.85
    assert effective_edac_dm(HardwareConfig()) == pytest.approx(expected)
    rdac = HardwareConfig(energy=EnergyParams(dac_model="rdac_1m"))
    assert effective_edac_dm(rdac) == pytest.approx(10e-15 * 2048)


def test_zero_pixels_rejected():
    """Test that a DAC must drive at least one pixel."""
    with pytest.raises(ValueError):
        dac_energy_total(MODELS["idac_1m"], 0)
    with pytest.raises(ValueError):
        dac_area(MODELS["rdac_1m"], 0)


def test_scaling_table():
    """Test the table ordering and row contents."""
    rows = scaling_table({"rdac_1m": MODELS["rdac_1m"], "idac_1m": MODELS["idac_1m"]}, [1, 100])
    assert [(r["model"], r["n_pixels"]) for r in rows] == [
        ("idac_1m", 1), ("idac_1m", 100), ("rdac_1m", 1), ("rdac_1m", 100),
    ]
    assert rows[3]["total_energy_j"] == pytest.approx(1e-12)
    assert rows[3]["per_pixel_energy_j"] == pytest.approx(10e-15)
