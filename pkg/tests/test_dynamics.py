"""Integrator and transport-energy model checks.

The harmonic integrator is compared against two independent references: a
closed-form spectral result for the ideal continuous ramp, and the constant
speed limit of the ramp shape where the round-trip energy has an elementary
expression.
"""

import numpy as np
import pytest
from scipy.constants import elementary_charge

from segtrap import (
    CA40,
    InvalidInputError,
    RampSpec,
    TransportResult,
    classify_loss,
    fourier_transport_energy,
    generate_waveform,
    integrate_full,
    integrate_harmonic,
)
from segtrap.waveform import SolverConfig, hold

OMEGA = 2 * np.pi * 200e3
PERIOD = 2 * np.pi / OMEGA


def at_tau(tau, sigma=2.0):
    return RampSpec(
        distance=2e-3,
        duration=tau * PERIOD,
        sigma=sigma,
        dt_update=1e-6,
        omega=OMEGA,
    )


# ------------------------------------------------------------ preconditions


def test_rejects_unknown_mode():
    with pytest.raises(InvalidInputError):
        integrate_harmonic(at_tau(4.0), CA40, mode="exact")


@pytest.mark.parametrize("dt", [0.0, -1e-9, 1e-7, 6e-8])
def test_rejects_coarse_or_nonpositive_dt(dt):
    # dt_update/20 = 50 ns and period/100 = 50 ns both bind here
    with pytest.raises(InvalidInputError):
        integrate_harmonic(at_tau(4.0), CA40, dt=dt)


def test_full_model_rejects_coarse_dt(basis, sequence_spec):
    wf = hold(sequence_spec.load_voltages, duration=5e-6, dt=1e-6)
    with pytest.raises(InvalidInputError):
        integrate_full(basis, wf, CA40, (13.7e-3, 0.0), dt=2e-7)


# ------------------------------------------------- harmonic model references


def test_fast_roundtrip_regression():
    # frozen output of this integrator at tau = 3.2; guards the ZOH path
    e = integrate_harmonic(at_tau(3.2), CA40).e_final_ev
    assert e * 1e3 == pytest.approx(170.7751234131317, rel=1e-9)


def test_spectral_formula_regression():
    e = fourier_transport_energy(at_tau(3.2), CA40)
    assert e * 1e3 == pytest.approx(197.11256243368413, rel=1e-9)


@pytest.mark.parametrize("tau", [3.2, 4.5, 5.5, 10.7])
def test_continuous_integrator_matches_spectral_formula(tau):
    ramp = at_tau(tau)
    e_int = integrate_harmonic(ramp, CA40, mode="continuous").e_final_ev
    e_ref = fourier_transport_energy(ramp, CA40)
    assert e_int == pytest.approx(e_ref, rel=1e-2)


def test_constant_speed_limit_closed_form():
    # sigma -> 0 makes the ramp a constant-speed round trip; the residual
    # energy is then 8 m v^2 sin^4(omega T / 4) with v = 2 d / T
    ramp = at_tau(4.3, sigma=1e-3)
    v = 2 * ramp.distance / ramp.duration
    e_ref = 8 * CA40.mass * v**2 * np.sin(OMEGA * ramp.duration / 4) ** 4
    e_ref /= elementary_charge
    e_int = integrate_harmonic(ramp, CA40, mode="continuous").e_final_ev
    assert e_int == pytest.approx(e_ref, rel=5e-3)
    assert fourier_transport_energy(ramp, CA40) == pytest.approx(e_ref, rel=1e-4)


def test_constant_speed_drag():
    # while the well moves at speed v the ion lags and oscillates with
    # amplitude v/omega, peaking at energy 2 m v^2
    ramp = at_tau(4.3, sigma=1e-3)
    traj = integrate_harmonic(ramp, CA40, mode="continuous")
    v = 2 * ramp.distance / ramp.duration
    outbound = traj.t < 0.45 * ramp.duration
    amp = np.max(np.abs(traj.z[outbound] - traj.z_well[outbound]))
    assert amp == pytest.approx(v / OMEGA, rel=1e-3)
    e_peak = np.max(traj.energy[outbound])
    assert e_peak == pytest.approx(2 * CA40.mass * v**2, rel=1e-3)


# --------------------------------------------------------- round-trip nulls


@pytest.mark.parametrize("tau", [2.0, 4.0, 6.0, 8.0, 10.0, 12.0])
@pytest.mark.parametrize("sigma", [1.0, 2.0, 3.0])
def test_even_tau_nulls_and_update_residual(tau, sigma):
    # durations of an even number of secular periods cancel exactly in the
    # continuous model; the stepped waveform leaves a nonzero residual
    ramp = at_tau(tau, sigma)
    assert fourier_transport_energy(ramp, CA40) < 1e-25
    assert integrate_harmonic(ramp, CA40, mode="continuous").e_final_ev < 1e-7
    e_zoh = integrate_harmonic(ramp, CA40).e_final_ev
    assert e_zoh > 1e-16


def test_stepped_updates_can_undershoot_ideal():
    # off the nulls the sign is not universal: at tau = 3.2 the stepped
    # waveform ends up below the continuous-model energy
    ramp = at_tau(3.2)
    e_zoh = integrate_harmonic(ramp, CA40).e_final_ev
    assert e_zoh < fourier_transport_energy(ramp, CA40)


# ----------------------------------------------------------- integrator math


def test_velocity_verlet_is_time_reversible():
    ramp = at_tau(3.3)
    fwd = integrate_harmonic(ramp, CA40, mode="continuous")
    z1, v1 = fwd.final_state
    # the mirrored ramp is its own reverse, so running again with the
    # flipped velocity must land back at the start
    back = integrate_harmonic(ramp, CA40, initial=(z1, -v1), mode="continuous")
    z2, v2 = back.final_state
    assert abs(z2) < 1e-12
    assert abs(v2) < 1e-8


def test_dt_refinement_converges():
    e1 = integrate_harmonic(at_tau(3.2), CA40, mode="continuous", dt=2e-8).e_final_ev
    e2 = integrate_harmonic(at_tau(3.2), CA40, mode="continuous", dt=1e-8).e_final_ev
    assert abs(e1 / e2 - 1) < 1e-3


def test_trajectory_summaries_consistent():
    traj = integrate_harmonic(at_tau(3.2), CA40)
    assert traj.e_max_ev >= traj.e_final_ev > 0
    assert traj.e_max_ev == pytest.approx(np.max(traj.energy) / elementary_charge)
    assert traj.max_excursion == np.max(np.abs(traj.z - traj.z_well))
    res = TransportResult.from_trajectory(traj)
    assert res.e_final_ev == traj.e_final_ev
    assert res.e_max_ev == traj.e_max_ev
    assert res.max_excursion == traj.max_excursion
    assert not res.lost and res.loss_time is None


# ----------------------------------------------------------------- full model


def test_full_model_rest_stays_at_rest(basis, sequence_spec, loading_well):
    wf = hold(
        sequence_spec.load_voltages,
        duration=100 / loading_well.frequency,
        dt=1e-6,
    )
    traj = integrate_full(basis, wf, CA40, (loading_well.z_min, 0.0))
    assert not traj.lost
    assert np.max(np.abs(traj.v)) < 2e-6
    assert traj.max_excursion < 1e-9


def test_full_model_conserves_energy_in_static_well(basis, sequence_spec, loading_well):
    wf = hold(
        sequence_spec.load_voltages,
        duration=100 / loading_well.frequency,
        dt=1e-6,
    )
    traj = integrate_full(basis, wf, CA40, (loading_well.z_min + 5e-6, 0.0))
    drift = (np.max(traj.energy) - np.min(traj.energy)) / np.mean(traj.energy)
    assert drift < 1e-3


def test_full_model_reports_escape(basis, sequence_spec, loading_well):
    # 1.3 eV of kinetic energy against a 0.52 eV barrier
    wf = hold(sequence_spec.load_voltages, duration=20e-6, dt=1e-6)
    traj = integrate_full(basis, wf, CA40, (loading_well.z_min, 2500.0))
    assert traj.lost
    assert traj.loss_time is not None
    assert 0 < traj.loss_time <= 20e-6


def test_full_model_matches_harmonic_replay(basis, loading_well):
    ramp = at_tau(3.2)
    wf = generate_waveform(
        basis, ramp, CA40, loading_well.z_min, SolverConfig()
    )
    traj = integrate_full(basis, wf, CA40, (loading_well.z_min, 0.0))
    assert not traj.lost
    e_harm = integrate_harmonic(ramp, CA40).e_final_ev
    assert traj.e_final_ev == pytest.approx(e_harm, rel=0.10)


# --------------------------------------------------------------- loss proxy


def test_classify_loss_threshold():
    assert not classify_loss(0.0, 0.4)
    assert not classify_loss(0.30 * 0.4, 0.4)  # strict inequality
    assert classify_loss(0.121, 0.4)
    assert classify_loss(0.6, 0.5, threshold=1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(e_max_ev=0.1, depth_ev=0.0),
        dict(e_max_ev=0.1, depth_ev=-1.0),
        dict(e_max_ev=0.1, depth_ev=0.4, threshold=0.0),
        dict(e_max_ev=0.1, depth_ev=0.4, threshold=1.5),
    ],
)
def test_classify_loss_rejects_bad_inputs(kwargs):
    with pytest.raises(InvalidInputError):
        classify_loss(**kwargs)
