"""Doppler cooling, fluorescence recovery, and energy estimation.

A hot ion oscillating in the well scatters few photons: the Doppler shift
sweeps it out of resonance and, for large amplitudes, it spends time outside
the beam waist.  As it cools the scattering rate climbs back toward the
steady value, so the time for the fluorescence to recover measures the
initial energy.

The workhorse model averages the scattering rate and the radiation-pressure
work over one secular oscillation at fixed energy, which turns the fast
coherent motion into a slow energy envelope ODE:

    dE/dt = hbar k_z <R v> + (hbar k_z)^2 <R> / m

(cooling power plus recoil heating; both averages taken over the
oscillation phase).  A direct velocity-Verlet integration of the coherent
motion with the same velocity-dependent force is available as a
cross-check; it carries no recoil term and is orders of magnitude slower.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ._fileio import data_lines, meta_line
from .constants import IonSpecies, elementary_charge, hbar
from .errors import EstimationError, InvalidInputError, ParseError

__all__ = [
    "LaserParams",
    "HeatingModel",
    "FluorescenceTrace",
    "EnergyEstimate",
    "calibrated_saturation",
    "scattering_rate",
    "doppler_limit_energy",
    "steady_state",
    "recovery_time",
    "simulate_recovery",
    "estimate_energy",
    "apply_heating",
    "save_trace",
    "load_trace",
]

_N_PHASE = 64  # phase points per oscillation average
_TIME_CAP = 1e9  # s, safety horizon for recovery integration


def calibrated_saturation(
    target_detected_rate: float = 20e3,
    linewidth: float = 2 * np.pi * 21.6e6,
    detuning: float = -np.pi * 21.6e6,
    detection_efficiency: float = 0.40,
) -> float:
    """Beam-center saturation that yields the target detected rate.

    This is a calibration, not a measured beam property: it fixes the one
    free intensity parameter so a cold stationary ion at the beam center
    produces ``target_detected_rate`` detected counts per second.
    """
    emitted = target_detected_rate / detection_efficiency
    x = emitted / (linewidth / 2)
    if not 0 < x < 1:
        raise InvalidInputError(
            "target rate not reachable: must be below the saturated scattering rate"
        )
    return x * (1 + (2 * detuning / linewidth) ** 2) / (1 - x)


@dataclass(frozen=True)
class LaserParams:
    """Cooling beam and transition parameters.

    ``saturation`` defaults to the value calibrated against the nominal
    20 kcounts/s detected steady rate; it is an explicit stored number, not
    a live calibration, so varying other fields for uncertainty propagation
    leaves it untouched.
    """

    wavelength: float = 397e-9
    linewidth: float = 2 * np.pi * 21.6e6  # angular, rad/s
    detuning: float = -np.pi * 21.6e6  # half a linewidth to the red
    saturation: float = calibrated_saturation()
    waist: float = 60e-6
    axial_projection: float = 1 / np.sqrt(2)  # beam k projected on the trap axis
    detection_efficiency: float = 0.40

    def __post_init__(self) -> None:
        if self.wavelength <= 0 or self.linewidth <= 0 or self.waist <= 0:
            raise InvalidInputError("wavelength, linewidth, and waist must be positive")
        if self.saturation <= 0:
            raise InvalidInputError("saturation must be positive")
        if not 0 < self.detection_efficiency <= 1:
            raise InvalidInputError("detection efficiency must be in (0, 1]")
        if not 0 < abs(self.axial_projection) <= 1:
            raise InvalidInputError("axial projection must be a direction cosine")

    @property
    def k_axial(self) -> float:
        """Axial component of the photon wavevector, rad/m."""
        return 2 * np.pi / self.wavelength * self.axial_projection


def scattering_rate(z, v, laser: LaserParams):
    """Photon scattering rate (emitted, 1/s) at position z and velocity v."""
    s = laser.saturation * np.exp(-2 * np.asarray(z) ** 2 / laser.waist**2)
    delta_eff = laser.detuning - laser.k_axial * np.asarray(v)
    return 0.5 * laser.linewidth * s / (1 + s + (2 * delta_eff / laser.linewidth) ** 2)


def doppler_limit_energy(laser: LaserParams) -> float:
    """Doppler cooling limit hbar * Gamma / 2, in eV."""
    return hbar * laser.linewidth / 2 / elementary_charge


def _envelope_model(laser: LaserParams, omega: float, species: IonSpecies):
    """Return stats(e_J) -> (dE/dt in W, mean emitted rate in 1/s)."""
    theta = (np.arange(_N_PHASE) + 0.5) * (2 * np.pi / _N_PHASE)
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    k_z = laser.k_axial
    recoil = (hbar * k_z) ** 2 / species.mass

    def stats(e_joule: float) -> tuple[float, float]:
        amp = np.sqrt(max(2 * e_joule, 0.0) / (species.mass * omega**2))
        z = amp * sin_t
        v = amp * omega * cos_t
        r = scattering_rate(z, v, laser)
        r_mean = float(np.mean(r))
        cooling = hbar * k_z * float(np.mean(r * v))
        return cooling + recoil * r_mean, r_mean

    return stats


def _envelope_rates(laser: LaserParams, omega: float, species: IonSpecies):
    """Vectorized phase-averaged emitted rate for arrays of energies (J)."""
    theta = (np.arange(_N_PHASE) + 0.5) * (2 * np.pi / _N_PHASE)
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    def mean_rates(e_joule) -> np.ndarray:
        e = np.clip(np.atleast_1d(np.asarray(e_joule, dtype=float)), 0.0, None)
        out = np.empty(e.shape)
        flat, flat_out = e.reshape(-1), out.reshape(-1)
        for i0 in range(0, flat.size, 16384):
            amp = np.sqrt(2 * flat[i0 : i0 + 16384, None] / (species.mass * omega**2))
            r = scattering_rate(amp * sin_t, amp * omega * cos_t, laser)
            flat_out[i0 : i0 + 16384] = r.mean(axis=1)
        return out

    return mean_rates


def steady_state(
    laser: LaserParams, omega: float, species: IonSpecies
) -> tuple[float, float]:
    """(steady energy in eV, steady detected rate in counts/s)."""
    stats = _envelope_model(laser, omega, species)
    e_scale = hbar * laser.linewidth / 2

    def balance(log_e: float) -> float:
        return stats(10**log_e * e_scale)[0]

    lo, hi = -3.0, 3.0
    if balance(lo) <= 0 or balance(hi) >= 0:
        raise EstimationError("no cooling equilibrium in the expected energy range")
    log_e = brentq(balance, lo, hi, xtol=1e-12)
    e_ss = 10**log_e * e_scale
    rate = stats(e_ss)[1] * laser.detection_efficiency
    return e_ss / elementary_charge, rate


def _recovery_solution(
    e0_ev: float,
    laser: LaserParams,
    omega: float,
    species: IonSpecies,
    frac: float,
    t_max: float,
):
    """Integrate the energy envelope; return (sol, t_recover, rates_of(e))."""
    if e0_ev <= 0:
        raise InvalidInputError("initial energy must be positive")
    stats = _envelope_model(laser, omega, species)
    e_ss_ev, _ = steady_state(laser, omega, species)
    rate_target = stats(e_ss_ev * elementary_charge)[1] * frac
    e0 = e0_ev * elementary_charge

    def rhs(t, y):
        return [stats(max(y[0], 0.0))[0]]

    def crossing(t, y):
        return stats(max(y[0], 0.0))[1] - rate_target

    crossing.terminal = False
    crossing.direction = 1.0

    # LSODA: the approach to the cooling steady state is stiff, and the
    # solution must cover the whole requested span cheaply once it settles.
    kwargs = dict(
        method="LSODA",
        dense_output=True,
        rtol=1e-6,
        atol=e_ss_ev * elementary_charge * 1e-6,
    )
    if stats(e0)[1] >= rate_target:
        t_rec = 0.0
        sol = solve_ivp(rhs, (0.0, t_max), [e0], **kwargs)
    else:
        sol = solve_ivp(rhs, (0.0, t_max), [e0], events=crossing, **kwargs)
        t_rec = float(sol.t_events[0][0]) if sol.t_events[0].size else None
    if not sol.success:
        raise EstimationError(f"energy envelope integration failed: {sol.message}")

    return sol, t_rec, _envelope_rates(laser, omega, species)


def recovery_time(
    e0_ev: float,
    laser: LaserParams,
    omega: float,
    species: IonSpecies,
    frac: float = 0.9,
) -> float:
    """Time for the scattering rate to reach ``frac`` of its steady value.

    This is the model-side definition used both to simulate traces and to
    invert them; it is independent of the detection efficiency because only
    the rate ratio enters.
    """
    _, t_rec, _ = _recovery_solution(e0_ev, laser, omega, species, frac, _TIME_CAP)
    if t_rec is None:
        raise EstimationError(
            f"no recovery within {_TIME_CAP:.0e} s for e0 = {e0_ev:.3g} eV"
        )
    return t_rec


@dataclass(eq=False)
class FluorescenceTrace:
    """Binned detected fluorescence rate during recovery.

    ``times`` are bin centers.  ``t_recover`` interpolates the first upward
    crossing of ``frac`` times the steady rate; None if the trace never
    gets there (unresolved).
    """

    times: np.ndarray  # s, bin centers
    rates: np.ndarray  # detected counts/s
    bin_width: float  # s
    steady_rate: float  # detected counts/s
    frac: float = 0.9

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if t.ndim != 1 or t.shape != r.shape or t.size < 2:
            raise InvalidInputError("trace needs matching 1-D times and rates")
        self.times = t
        self.rates = r

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FluorescenceTrace):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.rates, other.rates)
            and self.bin_width == other.bin_width
            and self.steady_rate == other.steady_rate
            and self.frac == other.frac
        )

    @property
    def t_recover(self) -> float | None:
        target = self.frac * self.steady_rate
        above = self.rates >= target
        if not np.any(above):
            return None
        i = int(np.argmax(above))
        if i == 0:
            return 0.0
        t0, t1 = self.times[i - 1], self.times[i]
        r0, r1 = self.rates[i - 1], self.rates[i]
        if r1 == r0:
            return float(t1)
        return float(t0 + (target - r0) / (r1 - r0) * (t1 - t0))


def simulate_recovery(
    e0_ev: float,
    laser: LaserParams,
    omega: float,
    species: IonSpecies,
    duration: float | None = None,
    bin_width: float = 1e-3,
    method: str = "envelope",
    thermal: bool = False,
    shot_noise: bool = False,
    rng: np.random.Generator | None = None,
) -> FluorescenceTrace:
    """Fluorescence trace of an ion recovering from energy ``e0_ev``.

    Parameters
    ----------
    duration:
        Trace length; default extends 30 percent past the expected recovery.
    method:
        "envelope" (energy ODE, default) or "direct" (velocity Verlet of
        the coherent motion, slow, for cross-checks).
    thermal:
        Average the envelope over an exponential energy distribution with
        mean ``e0_ev`` instead of a single coherent amplitude.
    shot_noise:
        Draw Poisson counts per bin (requires ``rng``).
    """
    if method not in ("envelope", "direct"):
        raise InvalidInputError(f"unknown method {method!r}")
    if bin_width <= 0:
        raise InvalidInputError("bin width must be positive")
    if shot_noise and rng is None:
        raise InvalidInputError("shot noise requires an rng")
    eff = laser.detection_efficiency
    _, steady_detected = steady_state(laser, omega, species)

    if method == "direct":
        if thermal:
            raise InvalidInputError("thermal averaging applies to the envelope method")
        times, rates = _direct_recovery(e0_ev, laser, omega, species, duration, bin_width)
        trace = FluorescenceTrace(times, rates * eff, bin_width, steady_detected)
    else:
        if thermal:
            # Exponential mixture via Gauss-Laguerre nodes.
            nodes, weights = np.polynomial.laguerre.laggauss(8)
            solutions = [
                _recovery_solution(max(x, 1e-4) * e0_ev, laser, omega, species, 0.9, _TIME_CAP)
                for x in nodes
            ]
            t_recs = [s[1] for s in solutions]
            horizon = max(t for t in t_recs if t is not None) if any(
                t is not None for t in t_recs
            ) else _TIME_CAP

            def rate_at(t: np.ndarray) -> np.ndarray:
                total = np.zeros_like(t)
                for w, (sol, _, rates_of) in zip(weights, solutions):
                    e_t = sol.sol(np.minimum(t, sol.t[-1]))[0]
                    total += w * rates_of(e_t)
                return total

        else:
            sol, t_rec, rates_of = _recovery_solution(
                e0_ev, laser, omega, species, 0.9, _TIME_CAP
            )
            horizon = t_rec if t_rec is not None else _TIME_CAP

            def rate_at(t: np.ndarray) -> np.ndarray:
                return rates_of(sol.sol(np.minimum(t, sol.t[-1]))[0])

        if duration is None:
            if horizon >= _TIME_CAP:
                raise EstimationError(
                    "cannot size the trace: recovery not reached; pass duration"
                )
            duration = (np.ceil(1.3 * horizon / bin_width) + 5) * bin_width
        n_bins = max(int(np.round(duration / bin_width)), 2)
        edges = bin_width * np.arange(n_bins + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        # Per-bin average via Simpson on the dense solution.
        r_lo = rate_at(edges[:-1])
        r_mid = rate_at(centers)
        r_hi = rate_at(edges[1:])
        rates = eff * (r_lo + 4 * r_mid + r_hi) / 6
        trace = FluorescenceTrace(centers, rates, bin_width, steady_detected)

    if shot_noise:
        counts = rng.poisson(np.clip(trace.rates, 0, None) * bin_width)
        trace = FluorescenceTrace(
            trace.times, counts / bin_width, bin_width, trace.steady_rate
        )
    return trace


def _direct_recovery(
    e0_ev: float,
    laser: LaserParams,
    omega: float,
    species: IonSpecies,
    duration: float | None,
    bin_width: float,
    steps_per_period: int = 200,
):
    """Velocity Verlet of the coherent motion with the scattering force.

    No recoil heating: deterministic damping only, useful as an
    independent check of the envelope model well above the Doppler limit.
    Returns (bin centers, emitted rate per bin).
    """
    if duration is None:
        duration = 1.5 * recovery_time(e0_ev, laser, omega, species)
        duration = (np.ceil(duration / bin_width) + 2) * bin_width
    mass = species.mass
    k_z = laser.k_axial
    dt = 2 * np.pi / omega / steps_per_period
    n_steps = int(np.ceil(duration / dt))
    amp = np.sqrt(2 * e0_ev * elementary_charge / (mass * omega**2))
    z, v = amp, 0.0

    n_bins = max(int(np.round(duration / bin_width)), 2)
    bin_rate = np.zeros(n_bins)
    bin_n = np.zeros(n_bins, dtype=int)

    def accel(z_, v_):
        r = scattering_rate(z_, v_, laser)
        return -(omega**2) * z_ + hbar * k_z * r / mass, r

    a, r = accel(z, v)
    for k in range(n_steps):
        b = min(int(k * dt / bin_width), n_bins - 1)
        bin_rate[b] += r
        bin_n[b] += 1
        z_new = z + v * dt + 0.5 * a * dt**2
        # First-order velocity estimate for the (weak) velocity-dependent force.
        v_est = v + a * dt
        a_new, r = accel(z_new, v_est)
        v = v + 0.5 * (a + a_new) * dt
        z, a = z_new, a_new
    rates = np.divide(bin_rate, np.maximum(bin_n, 1))
    centers = bin_width * (np.arange(n_bins) + 0.5)
    return centers, rates


@dataclass(frozen=True)
class EnergyEstimate:
    """Inverted initial energy with a propagated uncertainty."""

    e0_ev: float
    sigma_ev: float
    components_ev: dict  # parameter name -> contribution in eV
    t_recover: float  # s, the observation that was inverted

    @property
    def relative_sigma(self) -> float:
        return self.sigma_ev / self.e0_ev


DEFAULT_UNCERTAINTIES = {
    "waist": 10e-6,  # m
    "saturation_rel": 0.15,
    "detuning": 2 * np.pi * 30e6,  # rad/s
}


def _invert_recovery(
    t_obs: float,
    laser: LaserParams,
    omega: float,
    species: IonSpecies,
    frac: float,
) -> float:
    e_lo, e_hi = 1e-6, 1.0  # eV

    def f(log_e: float) -> float:
        try:
            t_model = recovery_time(10**log_e, laser, omega, species, frac)
        except EstimationError:
            # Slower than the integration cap: certainly above t_obs.
            t_model = _TIME_CAP
        return t_model - t_obs

    f_lo, f_hi = f(np.log10(e_lo)), f(np.log10(e_hi))
    if f_lo > 0:
        raise EstimationError(
            f"recovery time {t_obs:.3g} s is faster than the model floor"
        )
    if f_hi < 0:
        raise EstimationError(
            f"recovery time {t_obs:.3g} s exceeds the model range (e0 > {e_hi} eV)"
        )
    log_e = brentq(f, np.log10(e_lo), np.log10(e_hi), xtol=1e-6)
    return float(10**log_e)


def estimate_energy(
    trace: FluorescenceTrace,
    laser: LaserParams,
    omega: float,
    species: IonSpecies,
    uncertainties: dict | None = None,
    step_fraction: float = 0.25,
) -> EnergyEstimate:
    """Invert a recovery trace into the initial energy, with uncertainty.

    The recovery time read off the trace is matched against the envelope
    model by bisection in log-energy.  Each model parameter with a stated
    uncertainty is varied one at a time by ``step_fraction`` of its sigma
    (linearized, two-sided where possible), the induced energy shifts are
    scaled back to one sigma, and the components are combined in
    quadrature.  The saturation stays at its calibrated number while other
    parameters vary; recalibrating it inside the variation would change
    the question being asked.
    """
    if trace.t_recover is None:
        raise EstimationError("trace never recovers; cannot estimate the energy")
    if not 0 < step_fraction <= 1:
        raise InvalidInputError("step_fraction must be in (0, 1]")
    t_obs = float(trace.t_recover)
    frac = trace.frac
    e0 = _invert_recovery(t_obs, laser, omega, species, frac)

    if uncertainties is None:
        uncertainties = DEFAULT_UNCERTAINTIES
    components: dict[str, float] = {}
    for name, sigma in uncertainties.items():
        if name == "waist":
            variants = [
                (replace(laser, waist=laser.waist + s), h)
                for s, h in _steps(sigma, step_fraction)
            ]
        elif name == "saturation_rel":
            variants = [
                (replace(laser, saturation=laser.saturation * (1 + s)), h)
                for s, h in _steps(sigma, step_fraction)
            ]
        elif name == "detuning":
            variants = [
                (replace(laser, detuning=laser.detuning + s), h)
                for s, h in _steps(sigma, step_fraction)
            ]
        else:
            raise InvalidInputError(f"unknown uncertainty parameter {name!r}")
        shifts = []
        for varied, h in variants:
            try:
                e_var = _invert_recovery(t_obs, varied, omega, species, frac)
            except EstimationError:
                continue
            shifts.append((e_var - e0) / h)
        if not shifts:
            raise EstimationError(f"could not propagate uncertainty for {name!r}")
        components[name] = float(np.mean(np.abs(shifts)))
    sigma_ev = float(np.sqrt(sum(c**2 for c in components.values())))
    return EnergyEstimate(e0, sigma_ev, components, t_obs)


def _steps(sigma: float, step_fraction: float):
    h = step_fraction
    return [(sigma * h, h), (-sigma * h, -h)]


@dataclass(frozen=True)
class HeatingModel:
    """Constant anomalous heating of the trapped ion."""

    rate_ev_per_s: float = 3e-3
    rate_sigma_ev_per_s: float = 1e-3

    def __post_init__(self) -> None:
        if self.rate_ev_per_s < 0 or self.rate_sigma_ev_per_s < 0:
            raise InvalidInputError("heating rates must be non-negative")


def apply_heating(
    e_ev: float,
    model: HeatingModel,
    duration: float,
    rng: np.random.Generator | None = None,
) -> float:
    """Energy after ``duration`` of anomalous heating.

    Deterministic mean by default; with an rng the rate is drawn from the
    stated rate uncertainty per call.
    """
    if duration < 0:
        raise InvalidInputError("duration must be non-negative")
    rate = model.rate_ev_per_s
    if rng is not None and model.rate_sigma_ev_per_s > 0:
        rate = max(0.0, rng.normal(rate, model.rate_sigma_ev_per_s))
    return e_ev + rate * duration


_TRACE_HEADER = re.compile(
    r"^# fluorescence-trace v1 bin_ms=([0-9.eE+-]+) steady_rate=([0-9.eE+-]+)$"
)


def save_trace(trace: FluorescenceTrace, path, meta: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(
            f"# fluorescence-trace v1 bin_ms={trace.bin_width * 1e3!r} "
            f"steady_rate={trace.steady_rate!r}\n"
        )
        fh.write(meta_line(meta))
        fh.write("t_ms,detected_counts_per_s\n")
        for t, r in zip(trace.times, trace.rates):
            fh.write(f"{float(t * 1e3)!r},{float(r)!r}\n")


def load_trace(path) -> FluorescenceTrace:
    path = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty trace file", path=path, line=1)
    m = _TRACE_HEADER.match(lines[0])
    if not m:
        raise ParseError(
            "missing or malformed header, expected "
            "'# fluorescence-trace v1 bin_ms=X steady_rate=Y'",
            path=path,
            line=1,
        )
    bin_width = float(m.group(1)) * 1e-3
    steady = float(m.group(2))
    times, rates = [], []
    for lineno, line in data_lines(lines):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(
                f"expected 2 columns, got {len(parts)}", path=path, line=lineno
            )
        try:
            times.append(float(parts[0]) * 1e-3)
            rates.append(float(parts[1]))
        except ValueError:
            raise ParseError("non-numeric value", path=path, line=lineno) from None
    if len(times) < 2:
        raise ParseError("trace needs at least two bins", path=path, line=len(lines))
    return FluorescenceTrace(np.array(times), np.array(rates), bin_width, steady)
