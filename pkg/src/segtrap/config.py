"""TOML run configuration: schema, validation, and runtime builders.

Every physical key carries its unit in the name (freq_mhz, waist_um) so a
config file reads unambiguously.  Unknown sections or keys are rejected
with the dotted path of the offender; silent typos in a physics config are
much worse than a hard error.

The shipped defaults describe the reference apparatus this package models;
``data/example_config.toml`` spells all of them out with provenance notes
and must stay in sync with the dataclass defaults (a test enforces this).
"""

from __future__ import annotations

import hashlib
import json
import os
import types
import typing
from dataclasses import asdict, dataclass, fields

import numpy as np
import tomli

from .constants import CA40, IonSpecies
from .cooling import HeatingModel, LaserParams
from .errors import ConfigError
from .experiment import SequenceSpec, TrapSetup
from .trap_model import AxialBasis, TrapGeometry, compute_basis, default_grid
from .waveform import DacSpec, RampSpec, SolverConfig

__all__ = [
    "Config",
    "GeometryConfig",
    "IonConfig",
    "DriveConfig",
    "DacConfig",
    "SolverSection",
    "RampConfig",
    "LaserConfig",
    "HeatingConfig",
    "SequenceConfig",
    "CONFIG_ENV_VAR",
    "load_config",
    "parse_config",
    "default_config_path",
    "config_hash",
    "build_species",
    "build_geometry",
    "build_basis",
    "build_solver",
    "build_dac",
    "build_ramp",
    "build_laser",
    "build_heating",
    "build_setup",
    "build_load_voltages",
    "build_sequence_spec",
]

CONFIG_ENV_VAR = "SEGTRAP_CONFIG"


@dataclass(frozen=True)
class GeometryConfig:
    n_loading: int = 4
    n_taper: int = 2
    n_experimental: int = 9
    width_loading_mm: float = 2.0
    width_experimental_mm: float = 0.5
    groove_um: float = 120.0
    gap_loading_mm: float = 2.0
    gap_taper_mm: float = 1.5
    gap_experimental_mm: float = 1.0
    radial_r0_mm: float = 1.0
    grid_step_um: float = 2.0
    grid_margin_mm: float = 3.0
    stray_field_v_per_m: float = 0.0


@dataclass(frozen=True)
class IonConfig:
    species: str = "40Ca+"
    mass_u: float | None = None  # overrides the species table when set
    charge_e: float = 1.0


@dataclass(frozen=True)
class DriveConfig:
    freq_mhz: float = 11.81
    v_pp: float = 408.0
    kappa: float = 0.90


@dataclass(frozen=True)
class DacConfig:
    enabled: bool = True
    bits: int = 16
    full_scale_v: float = 10.0
    update_rate_mhz: float = 1.0
    filter_corner_mhz: float = 1.0


@dataclass(frozen=True)
class SolverSection:
    ridge: float = 1e-6
    voltage_limit_v: float = 10.0
    fit_halfwidth_mm: float = 0.75
    freq_tolerance: float = 0.01
    position_tolerance_um: float = 1.0
    well_halfwidth_mm: float = 0.3


@dataclass(frozen=True)
class RampConfig:
    distance_mm: float = 2.0
    duration_us: float = 20.0
    sigma: float = 2.0
    update_period_us: float = 1.0
    axial_freq_khz: float = 200.0


@dataclass(frozen=True)
class LaserConfig:
    wavelength_nm: float = 397.0
    linewidth_mhz: float = 21.6
    detuning_mhz: float = -10.8
    saturation: float | None = None  # None = calibrated to the nominal count rate
    waist_um: float = 60.0
    axial_projection: float = 0.7071067811865476
    detection_efficiency: float = 0.40


@dataclass(frozen=True)
class HeatingConfig:
    rate_mev_per_s: float = 3.0
    rate_sigma_mev_per_s: float = 1.0


@dataclass(frozen=True)
class SequenceConfig:
    load_segments: tuple[int, ...] = (7, 13)  # 1-based electrode pair numbers
    load_voltages_v: tuple[float, ...] = (6.0, 8.0)
    morph_steps: int = 10
    morph_dt_us: float = 1.0
    loss_threshold: float = 0.30
    background_loss: float = 0.0
    morph_mismatch_um: float = 0.0
    replace_transport_with_wait: bool = False
    settle_wait_us: float = 0.0
    settle_jitter_us: float = 0.0
    recovery_bin_ms: float = 1.0
    recovery_duration_s: float = 1.0
    seed: int = 0
    trials: int = 10


@dataclass(frozen=True)
class Config:
    geometry: GeometryConfig = GeometryConfig()
    ion: IonConfig = IonConfig()
    drive: DriveConfig = DriveConfig()
    dac: DacConfig = DacConfig()
    solver: SolverSection = SolverSection()
    ramp: RampConfig = RampConfig()
    laser: LaserConfig = LaserConfig()
    heating: HeatingConfig = HeatingConfig()
    sequence: SequenceConfig = SequenceConfig()


_SECTIONS: dict[str, type] = {
    "geometry": GeometryConfig,
    "ion": IonConfig,
    "drive": DriveConfig,
    "dac": DacConfig,
    "solver": SolverSection,
    "ramp": RampConfig,
    "laser": LaserConfig,
    "heating": HeatingConfig,
    "sequence": SequenceConfig,
}


def _coerce(dotted: str, raw, annotation):
    """Check and convert one TOML value against a dataclass annotation."""
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if raw is None:
            return None
        annotation = args[0]
        origin = typing.get_origin(annotation)

    if annotation is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"expected a number, got {raw!r}", key=dotted)
        return float(raw)
    if annotation is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"expected an integer, got {raw!r}", key=dotted)
        return int(raw)
    if annotation is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"expected true/false, got {raw!r}", key=dotted)
        return raw
    if annotation is str:
        if not isinstance(raw, str):
            raise ConfigError(f"expected a string, got {raw!r}", key=dotted)
        return raw
    if origin is tuple:
        item = typing.get_args(annotation)[0]
        if not isinstance(raw, list):
            raise ConfigError(f"expected a list, got {raw!r}", key=dotted)
        return tuple(_coerce(f"{dotted}[{i}]", v, item) for i, v in enumerate(raw))
    raise ConfigError(f"unsupported schema type {annotation!r}", key=dotted)


def _load_section(name: str, cls: type, raw: dict):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError("unknown key", key=f"{name}.{key}")
        values[key] = _coerce(f"{name}.{key}", value, hints[key])
    return cls(**values)


def parse_config(text: str, source: str = "<string>") -> Config:
    """Parse and validate TOML ``text`` into a Config."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error in {source}: {exc}") from None
    sections = {}
    for name, body in raw.items():
        if name not in _SECTIONS:
            raise ConfigError("unknown section", key=name)
        if not isinstance(body, dict):
            raise ConfigError("expected a [section] table", key=name)
        sections[name] = _load_section(name, _SECTIONS[name], body)
    cfg = Config(**sections)
    _validate(cfg)
    return cfg


def load_config(path: str | None = None) -> Config:
    """Load a config file; with no path, fall back to the environment.

    Resolution order: explicit argument, then the file named by the
    CONFIG_ENV_VAR environment variable, then built-in defaults.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return parse_config(text, source=str(path))


def default_config_path() -> str | None:
    return os.environ.get(CONFIG_ENV_VAR) or None


def _validate(cfg: Config) -> None:
    seq = cfg.sequence
    if len(seq.load_segments) != len(seq.load_voltages_v):
        raise ConfigError(
            "load_segments and load_voltages_v must have equal length",
            key="sequence.load_segments",
        )
    n_total = cfg.geometry.n_loading + cfg.geometry.n_taper + cfg.geometry.n_experimental
    for s in seq.load_segments:
        if not 1 <= s <= n_total:
            raise ConfigError(
                f"segment {s} outside 1..{n_total}", key="sequence.load_segments"
            )
    if cfg.ion.species not in _SPECIES_TABLE and cfg.ion.mass_u is None:
        raise ConfigError(
            f"unknown species {cfg.ion.species!r}: give ion.mass_u explicitly",
            key="ion.species",
        )


def config_hash(cfg: Config) -> str:
    """Platform-stable short hash of the fully resolved configuration."""
    blob = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


_SPECIES_TABLE: dict[str, IonSpecies] = {CA40.label: CA40}


def build_species(cfg: Config) -> IonSpecies:
    ion = cfg.ion
    if ion.mass_u is None:
        return _SPECIES_TABLE[ion.species]
    return IonSpecies(ion.species, ion.mass_u, ion.charge_e)


def build_geometry(cfg: Config) -> TrapGeometry:
    g = cfg.geometry
    return TrapGeometry.build(
        n_loading=g.n_loading,
        n_taper=g.n_taper,
        n_experimental=g.n_experimental,
        width_loading=g.width_loading_mm * 1e-3,
        width_experimental=g.width_experimental_mm * 1e-3,
        groove=g.groove_um * 1e-6,
        gap_loading=g.gap_loading_mm * 1e-3,
        gap_taper=g.gap_taper_mm * 1e-3,
        gap_experimental=g.gap_experimental_mm * 1e-3,
        radial_r0=g.radial_r0_mm * 1e-3,
    )


def build_basis(cfg: Config) -> AxialBasis:
    geometry = build_geometry(cfg)
    grid = default_grid(
        geometry,
        step=cfg.geometry.grid_step_um * 1e-6,
        margin=cfg.geometry.grid_margin_mm * 1e-3,
    )
    return compute_basis(geometry, grid)


def build_solver(cfg: Config) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(
        ridge=s.ridge,
        v_limit=s.voltage_limit_v,
        fit_halfwidth=s.fit_halfwidth_mm * 1e-3,
        freq_tolerance=s.freq_tolerance,
        position_tolerance=s.position_tolerance_um * 1e-6,
        well_halfwidth=s.well_halfwidth_mm * 1e-3,
    )


def build_dac(cfg: Config) -> DacSpec | None:
    d = cfg.dac
    if not d.enabled:
        return None
    return DacSpec(
        bits=d.bits,
        full_scale=d.full_scale_v,
        update_rate=d.update_rate_mhz * 1e6,
        filter_corner=d.filter_corner_mhz * 1e6,
    )


def build_ramp(cfg: Config) -> RampSpec:
    r = cfg.ramp
    return RampSpec(
        distance=r.distance_mm * 1e-3,
        duration=r.duration_us * 1e-6,
        sigma=r.sigma,
        dt_update=r.update_period_us * 1e-6,
        omega=2 * np.pi * r.axial_freq_khz * 1e3,
    )


def build_laser(cfg: Config) -> LaserParams:
    l = cfg.laser
    kwargs = dict(
        wavelength=l.wavelength_nm * 1e-9,
        linewidth=2 * np.pi * l.linewidth_mhz * 1e6,
        detuning=2 * np.pi * l.detuning_mhz * 1e6,
        waist=l.waist_um * 1e-6,
        axial_projection=l.axial_projection,
        detection_efficiency=l.detection_efficiency,
    )
    if l.saturation is not None:
        kwargs["saturation"] = l.saturation
    return LaserParams(**kwargs)


def build_heating(cfg: Config) -> HeatingModel:
    h = cfg.heating
    return HeatingModel(
        rate_ev_per_s=h.rate_mev_per_s * 1e-3,
        rate_sigma_ev_per_s=h.rate_sigma_mev_per_s * 1e-3,
    )


def build_setup(cfg: Config) -> TrapSetup:
    return TrapSetup(
        basis=build_basis(cfg),
        species=build_species(cfg),
        solver=build_solver(cfg),
        dac=build_dac(cfg),
    )


def build_load_voltages(cfg: Config) -> np.ndarray:
    g = cfg.geometry
    n_total = g.n_loading + g.n_taper + g.n_experimental
    u = np.zeros(n_total)
    for seg, volts in zip(cfg.sequence.load_segments, cfg.sequence.load_voltages_v):
        u[seg - 1] = volts
    return u


def build_sequence_spec(cfg: Config) -> SequenceSpec:
    seq = cfg.sequence
    return SequenceSpec(
        ramp=build_ramp(cfg),
        load_voltages=build_load_voltages(cfg),
        morph_steps=seq.morph_steps,
        morph_dt=seq.morph_dt_us * 1e-6,
        laser=build_laser(cfg),
        heating=build_heating(cfg),
        loss_threshold=seq.loss_threshold,
        background_loss=seq.background_loss,
        morph_mismatch=seq.morph_mismatch_um * 1e-6,
        replace_transport_with_wait=seq.replace_transport_with_wait,
        settle_wait=seq.settle_wait_us * 1e-6,
        settle_jitter=seq.settle_jitter_us * 1e-6,
        recovery_bin=seq.recovery_bin_ms * 1e-3,
        recovery_duration=seq.recovery_duration_s,
        seed=seq.seed,
    )
