"""
Tests for config loading, strict parsing and overrides.
"""

import json
from pathlib import Path

import pytest

from oen_npu.atoms.shared.config import (
    HardwareConfig,
    ProjectConfig,
    apply_overrides,
    config_to_dict,
    load_config,
    parse_config,
)
from oen_npu.atoms.shared.data_types import ConfigError, DacKind
from oen_npu.atoms.shared.presets import project_preset

SHIPPED_CONFIG = Path(__file__).resolve().parents[5] / "configs" / "table1.json"


def test_defaults_are_table1():
    """Test the default hardware values."""
    hw = HardwareConfig()
    assert (hw.geometry.rows, hw.geometry.cols) == (2048, 3072)
    assert hw.clocking.f_clk_hz == 2e9
    assert hw.clocking.r_subcycles == 2
    assert hw.geometry.pixels_per_adc == 80
    assert hw.geometry.num_adcs == 154 * 512
    assert set(hw.dac) == {"rdac_100k", "rdac_1m", "idac_100k", "idac_1m"}
    assert hw.selected_dac().kind == DacKind.IDAC


def test_photon_energy_from_wavelength():
    """Test hc/lambda at 940 nm, and an explicit override."""
    hw = HardwareConfig()
    assert hw.optics.photon_j == pytest.approx(2.113e-19, rel=1e-3)
    optics = hw.optics.model_copy(update={"photon_energy_j": 2.0e-19})
    assert optics.photon_j == 2.0e-19


def test_unknown_field_is_an_error():
    """Test that strict parsing rejects unknown fields."""
    with pytest.raises(ConfigError, match="hardware.clocking.f_clk"):
        parse_config({"hardware": {"clocking": {"f_clk": 1e9}}})


def test_wrong_type_is_an_error():
    """Test that a type error becomes a ConfigError."""
    with pytest.raises(ConfigError):
        parse_config({"hardware": {"geometry": {"rows": "many"}}})


def test_load_config_errors(tmp_path):
    """Test missing files and invalid JSON."""
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_roundtrip_through_json(tmp_path):
    """Test that a dumped config loads back equal."""
    config = project_preset("table1", "gpt3")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config_to_dict(config)))
    assert load_config(path) == config


def test_shipped_config_matches_preset():
    """Test that configs/table1.json describes the table1/gpt3 preset."""
    loaded = load_config(SHIPPED_CONFIG)
    preset = project_preset("table1", "gpt3")
    assert loaded.hardware == preset.hardware
    assert loaded.workload == preset.workload


def test_apply_overrides():
    """Test dotted-path overrides, including the hardware shorthand."""
    config = ProjectConfig()
    updated = apply_overrides(config, ["hardware.clocking.f_clk_hz=1e9", "geometry.rows=1024"])
    assert updated.hardware.clocking.f_clk_hz == 1e9
    assert updated.hardware.geometry.rows == 1024
    assert config.hardware.clocking.f_clk_hz == 2e9


def test_apply_overrides_enum_and_new_dac():
    """Test string values and adding a DAC preset."""
    config = apply_overrides(ProjectConfig(), [
        "quant.granularity=per_tensor",
        'hardware.dac.idac_x={"kind": "idac", "load_impedance_ohm": 1e6, "e_fixed_j": 1e-11}',
        "energy.dac_model=idac_x",
    ])
    assert config.quant.granularity.value == "per_tensor"
    assert config.hardware.selected_dac().e_fixed_j == 1e-11


@pytest.mark.parametrize("override", [
    "hardware.clocking.f_clk=1e9",
    "nothing.here=1",
    "no_equals_sign",
    "=5",
])
def test_bad_overrides(override):
    """Test that malformed or unknown overrides raise ConfigError."""
    with pytest.raises(ConfigError):
        apply_overrides(ProjectConfig(), [override])


def test_missing_dac_reference():
    """Test that a dangling dac_model reference raises on use."""
    hw = HardwareConfig(dac={})
    with pytest.raises(ConfigError, match="idac_1m"):
        hw.selected_dac()
