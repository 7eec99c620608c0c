"""
Configuration models for oen-npu.

Every model forbids unknown fields. Field names carry their units. Domain rules
(positive sizes, efficiencies in (0, 1], ...) are checked by validator.validate,
not here, so an out-of-range value still loads and is reported as a violation.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..workload.transformer import TransformerDims
from .data_types import ConfigError, DacKind, Granularity, NoiseMode, NoiseScope
from .utils import photon_energy_j

logger = logging.getLogger(__name__)


class StrictModel(BaseModel):
    """Base for all config sections: unknown fields are errors, instances are immutable."""
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArrayGeometry(StrictModel):
    rows: int = Field(2048, description="C_T: pixel rows (one input token per row)")
    cols: int = Field(3072, description="C_W: pixel columns (one weight row per column)")
    pixel_pitch_um: float = Field(10.0, description="Demodulator pixel pitch")
    adc_block: Tuple[int, int] = Field(
        (20, 4), description="Pixels read by one ADC, as (along columns, along rows)"
    )
    adc_array: Tuple[int, int] = Field(
        (154, 512), description="ADC count, as (along columns, along rows)"
    )
    adc_unit_size_um: Tuple[float, float] = Field((200.0, 40.0), description="ADC footprint")

    @property
    def pixel_area_um2(self) -> float:
        return self.pixel_pitch_um ** 2

    @property
    def num_adcs(self) -> int:
        return self.adc_array[0] * self.adc_array[1]

    @property
    def pixels_per_adc(self) -> int:
        return self.adc_block[0] * self.adc_block[1]


class ClockingParams(StrictModel):
    f_clk_hz: float = Field(2e9, description="DAC clock frequency")
    r_subcycles: int = Field(2, description="Sub-cycles per element: 1, 2 or 4")
    adc_sample_rate_hz: float = Field(1e8, description="ADC sampling rate")
    adc_bits: int = Field(8, description="b: ADC resolution")
    dac_bits: int = Field(8, description="DAC resolution")


class OpticalParams(StrictModel):
    wavelength_nm: Optional[float] = Field(940.0, description="Emitter wavelength")
    photon_energy_j: Optional[float] = Field(None, description="Overrides hc/lambda when set")
    eta_dm: float = Field(0.8, description="Demodulator quantum efficiency (contrast folded in)")
    eta_em: float = Field(0.3, description="Emitter power conversion efficiency")
    i_dark_a: float = Field(1e-12, description="Demodulator dark current")
    alpha_em: float = Field(1.0, description="Emitter duty cycle")
    tap_gain_plus: float = Field(1.0, description="Collection gain of the tap+ path")
    tap_gain_minus: float = Field(1.0, description="Collection gain of the tap- path")
    full_well_e: float = Field(1e7, description="Per-tap full well (assumption)")
    c_pix_f: float = Field(10e-15, description="In-pixel storage capacitance (assumption)")

    @property
    def photon_j(self) -> float:
        """Photon energy, from photon_energy_j when given, otherwise from the wavelength."""
        if self.photon_energy_j is not None:
            return self.photon_energy_j
        if self.wavelength_nm is None:
            raise ConfigError("optics needs wavelength_nm or photon_energy_j")
        return photon_energy_j(self.wavelength_nm)


class EnergyParams(StrictModel):
    e_read_j: float = Field(27.2e-12, description="HBM read energy per 8-bit value")
    e_write_j: float = Field(27.2e-12, description="HBM write energy per 8-bit value")
    e_dm_j: float = Field(2e-15, description="Demodulator pixel energy per update")
    e_adc_j: float = Field(2e-12, description="ADC energy per conversion")
    dac_model: str = Field("idac_1m", description="Key into hardware.dac for the Rx (E_DAC|DM) DAC")
    idac_opt_factor: float = Field(1.85, description="Divisor for the array-specific IDAC optimisation")
    exclude_hbm: bool = Field(True, description="Zero E_read/E_write in power (table1 convention)")


class AreaParams(StrictModel):
    a_dac_um2: float = Field(4854.4, description="Area per DAC (back-solved)")
    a_other_mm2: float = Field(0.0, description="Processor/controller/router area")


class HbmParams(StrictModel):
    chips: int = 8
    capacity_per_chip_bytes: float = 24e9
    rate_per_chip_bytes_s: float = 1.2e12
    energy_per_bit_j: float = 3.4e-12


class DacModel(StrictModel):
    """
    Affine DAC energy/area model: energy = e_fixed + e_per_pixel*n, area = a_fixed + a_per_pixel*n.
    """
    kind: DacKind
    load_impedance_ohm: float
    e_fixed_j: float = 0.0
    e_per_pixel_j: float = 0.0
    a_fixed_um2: float = 0.0
    a_per_pixel_um2: float = 0.0
    clock_ref_hz: float = 1e9


def default_dac_models() -> Dict[str, "DacModel"]:
    """
    Shipped DAC presets for the 100 kOhm and 1 MOhm pixel loads.

    Coefficients are calibration values: they reproduce the qualitative scaling of the
    RDAC/IDAC circuit simulations and, for idac_1m, close the table1 back-solve with
    e_dm_j = 2 fJ. They are not measured data.
    """
    return {
        "rdac_100k": DacModel(kind=DacKind.RDAC, load_impedance_ohm=1e5, e_per_pixel_j=100e-15,
                              a_fixed_um2=500.0, a_per_pixel_um2=2.0),
        "rdac_1m": DacModel(kind=DacKind.RDAC, load_impedance_ohm=1e6, e_per_pixel_j=10e-15,
                            a_fixed_um2=500.0, a_per_pixel_um2=0.2),
        "idac_100k": DacModel(kind=DacKind.IDAC, load_impedance_ohm=1e5, e_fixed_j=4.25984e-11,
                              e_per_pixel_j=5e-15, a_fixed_um2=4854.4),
        "idac_1m": DacModel(kind=DacKind.IDAC, load_impedance_ohm=1e6, e_fixed_j=4.25984e-11,
                            e_per_pixel_j=0.5e-15, a_fixed_um2=4854.4),
    }


class HardwareConfig(StrictModel):
    geometry: ArrayGeometry = ArrayGeometry()
    clocking: ClockingParams = ClockingParams()
    optics: OpticalParams = OpticalParams()
    energy: EnergyParams = EnergyParams()
    area: AreaParams = AreaParams()
    hbm: HbmParams = HbmParams()
    dac: Dict[str, DacModel] = Field(default_factory=default_dac_models)
    cooling_threshold_w_mm2: Optional[float] = Field(
        None, description="Report-only power-handling threshold; None disables the check"
    )

    def selected_dac(self) -> DacModel:
        """
        The DAC model referenced by energy.dac_model.

        Raises:
            ConfigError: If the reference is missing from the dac map
        """
        try:
            return self.dac[self.energy.dac_model]
        except KeyError:
            raise ConfigError(
                f"energy.dac_model={self.energy.dac_model!r} not found in hardware.dac "
                f"(available: {sorted(self.dac)})"
            )


class SimulationParams(StrictModel):
    drive_energy_j: Optional[float] = Field(
        None, description="Average unit pulse energy; None uses the SNR-optimal minimum"
    )
    read_noise_e: float = Field(0.0, description="Gaussian kTC/read noise per tap, electrons rms")
    adc_noise_lsb: float = Field(0.0, description="Gaussian ADC input-referred noise, LSB rms")
    shot_noise: bool = Field(True, description="Poisson sampling of tap charge in full_noise runs")
    adc_range_scale: float = Field(1.0, description="Fraction of the +/- in_dim full scale used by the ADC")
    reset_time_s: float = 0.0
    bytes_per_value: int = 1
    max_pixel_trials: int = Field(20_000_000, description="Element-trials allowed for full_noise runs")
    threads: Optional[int] = None


class QuantConfig(StrictModel):
    bits: Optional[int] = Field(8, description="None disables quantization")
    outlier_threshold: float = 6.0
    granularity: Granularity = Granularity.PER_VECTOR
    symmetric: bool = True


class NoiseConfig(StrictModel):
    sigma: float = 0.0
    apply_to: NoiseScope = NoiseScope.BOTH
    mode: NoiseMode = NoiseMode.PER_CALL
    seed: int = 0


class DatasetSpec(StrictModel):
    classes: int = 4
    samples_per_class: int = 160
    seq_len: int = 8
    feature_dim: int = 8
    cluster_std: float = 1.0
    test_fraction: float = 0.25
    val_fraction: float = 0.125


class ModelSpec(StrictModel):
    embed_dim: int = 32
    heads: int = 2
    layers: int = 2
    ff_mult: int = 2
    epochs: int = 60
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    target_accuracy: float = 0.95


class ProjectConfig(StrictModel):
    provenance: str = ""
    hardware: HardwareConfig = HardwareConfig()
    workload: TransformerDims = TransformerDims(
        tokens=2048, layers=96, heads=96, head_dim=128, embed_dim=12288, ff_dim=49152
    )
    simulation: SimulationParams = SimulationParams()
    quant: QuantConfig = QuantConfig()
    noise: NoiseConfig = NoiseConfig()
    dataset: DatasetSpec = DatasetSpec()
    model: ModelSpec = ModelSpec()


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item["loc"])
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def parse_config(data: Dict[str, Any]) -> ProjectConfig:
    """
    Parse a config dictionary strictly.

    Args:
        data: Decoded JSON object

    Returns:
        ProjectConfig

    Raises:
        ConfigError: On unknown fields or type errors
    """
    try:
        return ProjectConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {_format_validation_error(e)}")


def load_config(path: Union[str, Path]) -> ProjectConfig:
    """
    Load a JSON config file.

    Args:
        path: Path to the JSON file

    Returns:
        ProjectConfig

    Raises:
        ConfigError: If the file is missing, not JSON, or fails strict parsing
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing config {path}: {e}")
        raise ConfigError(f"Config file is not valid JSON: {path}: {e}")
    return parse_config(data)


def config_to_dict(config: BaseModel) -> Dict[str, Any]:
    """JSON-compatible dictionary of a config model."""
    return config.model_dump(mode="json")


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: ProjectConfig, overrides: List[str]) -> ProjectConfig:
    """
    Apply dotted-path overrides such as "hardware.clocking.f_clk_hz=1e9". Paths that
    start with a hardware section name may omit the "hardware." prefix.

    Args:
        config: Base config
        overrides: "path=value" strings; values are parsed as JSON when possible

    Returns:
        New ProjectConfig

    Raises:
        ConfigError: On a malformed override or an unknown path
    """
    data = config_to_dict(config)
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"Override must look like path=value, got {override!r}")
        path, raw = override.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"Empty override path in {override!r}")
        if keys[0] not in ProjectConfig.model_fields and keys[0] in HardwareConfig.model_fields:
            # clocking.f_clk_hz is shorthand for hardware.clocking.f_clk_hz
            keys = ["hardware"] + keys
        node = data
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"Unknown config field {path!r}")
            node = node[key]
        if not isinstance(node, dict):
            raise ConfigError(f"Unknown config field {path!r}")
        if keys[-1] not in node and not _is_open_map(keys):
            raise ConfigError(f"Unknown config field {path!r}")
        node[keys[-1]] = _parse_override_value(raw)
    return parse_config(data)


def _is_open_map(keys: List[str]) -> bool:
    # hardware.dac.<name> may add a new DAC preset
    return len(keys) == 3 and keys[0] == "hardware" and keys[1] == "dac"
