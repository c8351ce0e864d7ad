"""Classical ion motion in static and time-dependent axial potentials.

Two models of the same transport:

* ``integrate_harmonic``: the well is a rigid parabola of fixed frequency
  whose center follows the transport ramp, either continuously or through
  zero-order-hold updates.  This isolates the excitation caused purely by
  the discretized motion of an ideal well.
* ``integrate_full``: the ion moves in the actual superposed electrode
  potential of a voltage waveform, including anharmonicity, well breathing,
  and escape over finite barriers.

Both use velocity Verlet.  For a rest-started ideal harmonic transport the
final oscillation energy has a closed spectral form, implemented in
``fourier_transport_energy`` and evaluated through the Faddeeva function so
it stays finite in the strongly adiabatic limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf, wofz

from .constants import IonSpecies, elementary_charge
from .errors import IntegrationError, InvalidInputError
from .trap_model import AxialBasis
from .waveform import RampSpec, VoltageWaveform

__all__ = [
    "Trajectory",
    "TransportResult",
    "WaveformPhysics",
    "integrate_harmonic",
    "integrate_full",
    "fourier_transport_energy",
    "classify_loss",
]

_MAX_SPEED = 1e5  # m/s, far beyond any physical transport; triggers blow-up error


@dataclass(eq=False)
class Trajectory:
    """Sampled ion motion.

    ``energy`` is measured against the instantaneous well: kinetic energy
    plus potential relative to the current well minimum.  ``z_well`` is that
    minimum at each sample, so ``z - z_well`` is the excursion.
    """

    t: np.ndarray  # s
    z: np.ndarray  # m
    v: np.ndarray  # m/s
    energy: np.ndarray  # J
    z_well: np.ndarray  # m
    lost: bool = False
    loss_time: float | None = None

    @property
    def e_final_ev(self) -> float:
        return float(self.energy[-1]) / elementary_charge

    @property
    def e_max_ev(self) -> float:
        return float(np.max(self.energy)) / elementary_charge

    @property
    def max_excursion(self) -> float:
        """Largest |z - z_well| along the trajectory, m."""
        return float(np.max(np.abs(self.z - self.z_well)))

    @property
    def final_state(self) -> tuple[float, float]:
        return float(self.z[-1]), float(self.v[-1])


@dataclass(frozen=True)
class TransportResult:
    """Summary numbers of one transport trajectory."""

    e_final_ev: float
    e_max_ev: float
    max_excursion: float  # m
    lost: bool
    loss_time: float | None = None

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TransportResult":
        return cls(
            traj.e_final_ev, traj.e_max_ev, traj.max_excursion, traj.lost, traj.loss_time
        )


def _check_dt(dt: float, dt_update: float, period: float | None) -> None:
    if dt <= 0:
        raise InvalidInputError("integration step must be positive")
    if dt > dt_update / 20 * (1 + 1e-12):
        raise InvalidInputError(
            f"integration step {dt:.3g} s too coarse for {dt_update:.3g} s updates "
            "(need dt <= dt_update / 20)"
        )
    if period is not None and dt > period / 100 * (1 + 1e-12):
        raise InvalidInputError(
            f"integration step {dt:.3g} s too coarse for the {period:.3g} s "
            "secular period (need dt <= period / 100)"
        )


def integrate_harmonic(
    ramp: RampSpec,
    species: IonSpecies,
    initial: tuple[float, float] = (0.0, 0.0),
    dt: float | None = None,
    mode: str = "zoh",
) -> Trajectory:
    """Transport in a rigid harmonic well following the ramp.

    Parameters
    ----------
    initial:
        (z, v) at t = 0, with z measured from the transport origin.
    dt:
        Integration step; defaults to dt_update / 50, and must satisfy
        dt <= dt_update / 20 and dt <= secular period / 100.
    mode:
        "zoh" steps the well center once per dt_update row, mirroring the
        synthesized waveform; "continuous" moves it smoothly.
    """
    if mode not in ("zoh", "continuous"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    period = 2 * np.pi / ramp.omega
    if dt is None:
        dt = min(ramp.dt_update / 50, period / 100)
    _check_dt(dt, ramp.dt_update, period)

    omega2 = ramp.omega**2
    if mode == "zoh":
        n_rows = int(np.ceil(ramp.duration / ramp.dt_update - 1e-9)) + 1
        row_t = ramp.dt_update * np.arange(n_rows)
        s = np.clip(np.minimum(row_t, ramp.duration - row_t), 0.0, ramp.duration / 2)
        row_targets = np.asarray(ramp.position(s), dtype=float)
        n_sub = max(1, int(np.ceil(ramp.dt_update / dt - 1e-9)))
        dt_eff = ramp.dt_update / n_sub
        n_steps = (n_rows - 1) * n_sub
        # Target held constant within each update row.
        targets = np.append(np.repeat(row_targets[:-1], n_sub), row_targets[-1])
        times = dt_eff * np.arange(n_steps + 1)
    else:
        n_steps = int(np.ceil(ramp.duration / dt - 1e-9))
        dt_eff = ramp.duration / n_steps
        times = dt_eff * np.arange(n_steps + 1)
        targets = np.asarray(
            ramp.position(np.minimum(times, ramp.duration)), dtype=float
        )

    z = np.empty(n_steps + 1)
    v = np.empty(n_steps + 1)
    z[0], v[0] = initial
    a = -omega2 * (z[0] - targets[0])
    for k in range(n_steps):
        z[k + 1] = z[k] + v[k] * dt_eff + 0.5 * a * dt_eff**2
        a_next = -omega2 * (z[k + 1] - targets[k + 1])
        v[k + 1] = v[k] + 0.5 * (a + a_next) * dt_eff
        a = a_next
    if not np.isfinite(z[-1]) or np.max(np.abs(v)) > _MAX_SPEED:
        raise IntegrationError("harmonic integration blew up")

    energy = 0.5 * species.mass * (v**2 + omega2 * (z - targets) ** 2)
    return Trajectory(times, z, v, energy, targets.copy())


class WaveformPhysics:
    """Per-row potential splines for one waveform on one basis.

    Rows are built lazily in order and cached, so repeated trials over the
    same waveform pay the spline construction once.  The well minimum is
    tracked row to row starting from ``track_start``; splines cover the
    well neighborhood, and an ion leaving that neighborhood counts as
    escaped.
    """

    def __init__(
        self,
        basis: AxialBasis,
        waveform: VoltageWaveform,
        species: IonSpecies,
        track_start: float,
        window_halfwidth: float = 2.5e-3,
        track_step: float = 0.6e-3,
    ):
        if waveform.n_electrodes != basis.n_electrodes:
            raise InvalidInputError(
                f"waveform has {waveform.n_electrodes} electrodes, "
                f"basis has {basis.n_electrodes}"
            )
        self.basis = basis
        self.waveform = waveform
        self.species = species
        self.window_halfwidth = window_halfwidth
        self.track_step = track_step
        self._sign = 1.0 if species.charge > 0 else -1.0
        self._track_start = track_start
        self._rows: list = []

    def row(self, k: int):
        """(pot, dpot, z_well, w_min, lo, hi) for waveform row ``k``.

        ``pot`` is the potential shape in volts with the sign flipped for
        negative species, so its minima always confine.  ``lo, hi`` bound
        the spline window.
        """
        if k >= self.waveform.n_rows:
            raise InvalidInputError(f"row {k} beyond waveform of {self.waveform.n_rows}")
        while len(self._rows) <= k:
            self._rows.append(self._build(len(self._rows)))
        return self._rows[k]

    def _build(self, k: int):
        grid = self.basis.grid
        w_row = self._sign * (self.waveform.voltages[k] @ self.basis.response)

        guess = self._rows[k - 1][2] if k > 0 else self._track_start
        lo_i = int(np.searchsorted(grid, guess - self.track_step))
        hi_i = int(np.searchsorted(grid, guess + self.track_step, side="right"))
        if hi_i - lo_i < 3:
            raise InvalidInputError("well tracking window left the tabulated grid")
        i_min = lo_i + int(np.argmin(w_row[lo_i:hi_i]))
        i_min = min(max(i_min, 1), grid.size - 2)
        # Parabolic refinement on the three neighboring samples.
        y0, y1, y2 = w_row[i_min - 1 : i_min + 2]
        denom = y0 - 2 * y1 + y2
        offset = 0.0 if denom <= 0 else float(np.clip(0.5 * (y0 - y2) / denom, -1, 1))
        z_well = grid[i_min] + offset * (grid[i_min + 1] - grid[i_min])

        w_lo = int(np.searchsorted(grid, z_well - self.window_halfwidth))
        w_hi = int(np.searchsorted(grid, z_well + self.window_halfwidth, side="right"))
        dw_row = self._sign * (
            self.waveform.voltages[k] @ self.basis.derivative_table()[:, w_lo:w_hi]
        )
        pot = CubicSpline(grid[w_lo:w_hi], w_row[w_lo:w_hi])
        dpot = CubicSpline(grid[w_lo:w_hi], dw_row)
        w_min = float(pot(z_well))
        return (pot, dpot, float(z_well), w_min, grid[w_lo], grid[w_hi - 1])


def _integrate_waveform_batch(
    physics: WaveformPhysics,
    z0: np.ndarray,
    v0: np.ndarray,
    dt: float | None,
):
    """Velocity Verlet for a batch of ions through one waveform.

    Returns (times, Z, V, E, z_well, active, loss_time); arrays Z, V, E
    have shape (n_steps + 1, n_batch).  An ion whose position leaves the
    spline window is frozen at its last confined position with v = 0 and
    counted as lost from that time on.  The sample at a row boundary is
    referenced to the row that was just applied; the final sample is
    re-referenced to the settled last row.
    """
    wave = physics.waveform
    species = physics.species
    if dt is None:
        dt = wave.dt / 50
    _check_dt(dt, wave.dt, None)
    n_sub = max(1, int(np.ceil(wave.dt / dt - 1e-9)))
    dt_eff = wave.dt / n_sub
    n_rows = wave.n_rows
    n_steps = (n_rows - 1) * n_sub
    n_batch = z0.size
    mass = species.mass
    q_abs = abs(species.charge)

    times = dt_eff * np.arange(n_steps + 1)
    big_z = np.empty((n_steps + 1, n_batch))
    big_v = np.empty((n_steps + 1, n_batch))
    big_e = np.empty((n_steps + 1, n_batch))
    well = np.empty(n_steps + 1)
    active = np.ones(n_batch, dtype=bool)
    loss_time = np.full(n_batch, np.nan)

    z = np.array(z0, dtype=float)
    v = np.array(v0, dtype=float)

    pot, dpot, z_w, w_min, lo, hi = physics.row(0)
    if np.any((z < lo) | (z > hi)):
        raise InvalidInputError("initial position outside the tracked well region")
    big_z[0], big_v[0], well[0] = z, v, z_w
    big_e[0] = 0.5 * mass * v**2 + q_abs * (pot(z) - w_min)

    step = 0
    for k in range(n_rows - 1):
        pot, dpot, z_w, w_min, lo, hi = physics.row(k)
        # The potential jumps between rows; refresh the acceleration.
        a = np.where(active, -q_abs / mass * dpot(np.clip(z, lo, hi)), 0.0)
        for _ in range(n_sub):
            step += 1
            z_new = z + v * dt_eff + 0.5 * a * dt_eff**2
            inside = (z_new >= lo) & (z_new <= hi) & np.isfinite(z_new)
            newly_lost = active & ~inside
            if np.any(newly_lost):
                loss_time[newly_lost] = times[step]
                active = active & inside
                v = np.where(newly_lost, 0.0, v)
            z = np.where(active, z_new, z)
            zc = np.clip(z, lo, hi)
            a_next = np.where(active, -q_abs / mass * dpot(zc), 0.0)
            v = np.where(active, v + 0.5 * (a + a_next) * dt_eff, v)
            a = a_next
            big_z[step] = z
            big_v[step] = v
            well[step] = z_w
            big_e[step] = 0.5 * mass * v**2 + q_abs * (pot(zc) - w_min)
        if np.any(active) and np.any(np.abs(v[active]) > _MAX_SPEED):
            raise IntegrationError("full-potential integration blew up")

    # The final sample sits in the settled last row, not the one just held.
    pot, dpot, z_w, w_min, lo, hi = physics.row(n_rows - 1)
    well[-1] = z_w
    big_e[-1] = 0.5 * mass * v**2 + q_abs * (pot(np.clip(z, lo, hi)) - w_min)
    return times, big_z, big_v, big_e, well, active, loss_time


def integrate_full(
    basis: AxialBasis,
    waveform: VoltageWaveform,
    species: IonSpecies,
    initial: tuple[float, float],
    dt: float | None = None,
    physics: WaveformPhysics | None = None,
) -> Trajectory:
    """Ion motion through the actual potential of a voltage waveform.

    Forces come from cubic interpolation of the tabulated basis derivative,
    so imported bases behave identically to computed ones.  ``initial`` is
    the absolute (z, v) at the first row.  Pass a prebuilt
    ``WaveformPhysics`` to reuse row splines across calls.

    The returned trajectory is marked ``lost`` if the ion left the tracked
    well region (escape over a barrier).
    """
    z0, v0 = initial
    if physics is None:
        physics = WaveformPhysics(basis, waveform, species, track_start=z0)
    times, big_z, big_v, big_e, well, active, loss_time = _integrate_waveform_batch(
        physics, np.array([z0], dtype=float), np.array([v0], dtype=float), dt
    )
    lost = not bool(active[0])
    return Trajectory(
        times,
        big_z[:, 0],
        big_v[:, 0],
        big_e[:, 0],
        well,
        lost=lost,
        loss_time=float(loss_time[0]) if lost else None,
    )


def _gauss_window_integral(q: float, sigma: float) -> float:
    """Integral of exp(-x^2) exp(iqx) over [-sigma, sigma]; real by symmetry.

    Evaluated through the Faddeeva function so the result stays finite for
    arbitrarily large q, where the naive erf product overflows.
    """
    w = wofz(q / 2 + 1j * sigma)
    return float(
        np.sqrt(np.pi)
        * (np.exp(-(q**2) / 4) - np.exp(-(sigma**2)) * np.real(np.exp(1j * sigma * q) * w))
    )


def fourier_transport_energy(ramp: RampSpec, species: IonSpecies) -> float:
    """Final oscillation energy of an ideal continuous transport, in eV.

    For a rigid harmonic well moving along z0(t) with the ion starting at
    rest in the well, the residual energy is the spectral density of the
    well velocity at the secular frequency:

        E = (m omega^2 / 2) * | integral dz0/dt * exp(i omega t) dt |^2

    The mirrored out-and-back ramp reduces the integral to a Gaussian
    window integral times 4 sin^2(pi tau / 2): round trips lasting an even
    number of trap periods cancel exactly in this model.
    """
    beta = 4 * ramp.sigma / ramp.duration
    c = (ramp.distance / 2) * beta * (2 / np.sqrt(np.pi)) / erf(ramp.sigma)
    g = _gauss_window_integral(ramp.omega / beta, ramp.sigma)
    mod2 = (c * g / beta) ** 2 * 4 * np.sin(np.pi * ramp.tau / 2) ** 2
    return 0.5 * species.mass * ramp.omega**2 * mod2 / elementary_charge


def classify_loss(e_max_ev: float, depth_ev: float, threshold: float = 0.30) -> bool:
    """Loss proxy: transient energy above ``threshold`` of the well depth.

    In the rigid harmonic model the well has no edge, so loss is declared
    when the transient energy exceeds the stated fraction of the real
    well's depth.  The full-potential model sees actual escape as well;
    this proxy exists so both models report a comparable survival number.
    """
    if depth_ev <= 0:
        raise InvalidInputError("well depth must be positive")
    if not 0 < threshold <= 1:
        raise InvalidInputError("threshold must be in (0, 1]")
    return bool(e_max_ev > threshold * depth_ev)
