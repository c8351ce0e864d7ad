"""Configuration schema, validation, and builder tests."""

import importlib.resources

import numpy as np
import pytest

from segtrap import CA40, Config, ConfigError
from segtrap.config import (
    CONFIG_ENV_VAR,
    build_dac,
    build_heating,
    build_laser,
    build_load_voltages,
    build_ramp,
    build_sequence_spec,
    build_species,
    config_hash,
    load_config,
    parse_config,
)
from segtrap.cooling import LaserParams


def example_text() -> str:
    ref = importlib.resources.files("segtrap") / "data" / "example_config.toml"
    return ref.read_text()


# ------------------------------------------------------------------- parsing


def test_example_file_spells_out_the_defaults():
    assert parse_config(example_text()) == Config()


def test_hash_is_stable_and_sensitive():
    assert config_hash(Config()) == "2c95cc2cfae4"
    changed = parse_config("[ramp]\nsigma = 2.4\n")
    assert config_hash(changed) != config_hash(Config())


def test_empty_config_is_all_defaults():
    assert parse_config("") == Config()


def test_partial_section_keeps_other_defaults():
    cfg = parse_config("[ramp]\nduration_us = 30.0\n")
    assert cfg.ramp.duration_us == 30.0
    assert cfg.ramp.sigma == Config().ramp.sigma
    assert cfg.laser == Config().laser


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config("[rampp]\nsigma = 2.0\n")
    assert err.value.key == "rampp"


def test_unknown_key_carries_dotted_path():
    with pytest.raises(ConfigError) as err:
        parse_config("[ramp]\nsimga = 2.0\n")
    assert err.value.key == "ramp.simga"


def test_bool_is_not_a_number():
    with pytest.raises(ConfigError) as err:
        parse_config("[ramp]\nsigma = true\n")
    assert err.value.key == "ramp.sigma"


def test_float_is_not_an_integer():
    with pytest.raises(ConfigError) as err:
        parse_config("[sequence]\nmorph_steps = 2.5\n")
    assert err.value.key == "sequence.morph_steps"


def test_scalar_section_rejected():
    with pytest.raises(ConfigError):
        parse_config("geometry = 5\n")


def test_syntax_error_reported():
    with pytest.raises(ConfigError):
        parse_config("[ramp\nsigma = 2.0\n")


def test_list_coercion_and_length_check():
    cfg = parse_config(
        "[sequence]\nload_segments = [6, 12]\nload_voltages_v = [5.0, 7.0]\n"
    )
    assert cfg.sequence.load_segments == (6, 12)
    with pytest.raises(ConfigError):
        parse_config("[sequence]\nload_segments = [6]\n")
    with pytest.raises(ConfigError):
        parse_config(
            "[sequence]\nload_segments = [6, 99]\nload_voltages_v = [5.0, 7.0]\n"
        )


def test_unknown_species_needs_mass():
    with pytest.raises(ConfigError) as err:
        parse_config('[ion]\nspecies = "9Be+"\n')
    assert err.value.key == "ion.species"
    cfg = parse_config('[ion]\nspecies = "9Be+"\nmass_u = 9.012\n')
    ion = build_species(cfg)
    assert ion.label == "9Be+"
    assert ion.mass_u == 9.012


# ------------------------------------------------------------------ loading


def test_load_config_resolution_order(tmp_path, monkeypatch):
    path = tmp_path / "run.toml"
    path.write_text("[ramp]\nsigma = 2.7\n")
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    assert load_config() == Config()
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert load_config().ramp.sigma == 2.7
    other = tmp_path / "other.toml"
    other.write_text("[ramp]\nsigma = 3.1\n")
    assert load_config(str(other)).ramp.sigma == 3.1


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.toml"))


# ------------------------------------------------------------------ builders


def test_ramp_builder_units():
    ramp = build_ramp(Config())
    assert ramp.distance == pytest.approx(2e-3)
    assert ramp.duration == pytest.approx(20e-6)
    assert ramp.dt_update == pytest.approx(1e-6)
    assert ramp.omega == pytest.approx(2 * np.pi * 200e3)


def test_laser_builder_defaults_to_calibrated_saturation():
    laser = build_laser(Config())
    assert laser.saturation == LaserParams().saturation
    assert laser.detuning == pytest.approx(-2 * np.pi * 10.8e6)
    explicit = build_laser(parse_config("[laser]\nsaturation = 0.5\n"))
    assert explicit.saturation == 0.5


def test_dac_builder_can_disable():
    assert build_dac(Config()) is not None
    assert build_dac(parse_config("[dac]\nenabled = false\n")) is None


def test_heating_builder_units():
    heating = build_heating(Config())
    assert heating.rate_ev_per_s == pytest.approx(3e-3)
    assert heating.rate_sigma_ev_per_s == pytest.approx(1e-3)


def test_load_voltage_vector_placement():
    u = build_load_voltages(Config())
    assert u.shape == (15,)
    assert u[6] == 6.0
    assert u[12] == 8.0
    assert np.count_nonzero(u) == 2


def test_sequence_spec_builder_units():
    spec = build_sequence_spec(
        parse_config("[sequence]\nmorph_mismatch_um = 10.0\nsettle_jitter_us = 5.0\n")
    )
    assert spec.morph_mismatch == pytest.approx(10e-6)
    assert spec.settle_jitter == pytest.approx(5e-6)
    assert spec.laser == build_laser(Config())


def test_species_table_default():
    assert build_species(Config()) is CA40
