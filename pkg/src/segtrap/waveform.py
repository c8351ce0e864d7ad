"""Transport ramps and voltage waveform synthesis.

The target trajectory for one out-and-back shuttle of total duration T and
one-way throw d is an error-function ramp mirrored in time:

    z0(t) = (d/2) * (1 + erf((4 s/T - 1) * sigma) / erf(sigma)),  s = min(t, T - t)

so the well leaves the origin at t = 0, reaches d at t = T/2, and retraces
its path back by t = T.  The end points are exact by construction (the erf
is normalized by erf(sigma)), and sigma sets how sharply the motion starts
and stops.

Voltages that realize a harmonic well at a requested position come from a
ridge-regularized least-squares fit of the electrode basis to the ideal
parabola over a window around the target, followed by a verification that
the achieved well actually meets frequency and position tolerances, and a
single clip-and-resolve pass if any electrode exceeds the DAC range.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import erf

from ._fileio import data_lines, meta_line
from .constants import IonSpecies
from .errors import InfeasibleError, InvalidInputError, NoWellError, ParseError
from .trap_model import AxialBasis, characterize_well, superpose

__all__ = [
    "RampSpec",
    "SolverConfig",
    "DacSpec",
    "VoltageWaveform",
    "solve_voltages",
    "generate_waveform",
    "morph",
    "hold",
    "quantize",
    "time_reverse",
    "lowpass",
    "save_waveform",
    "load_waveform",
]


@dataclass(frozen=True)
class RampSpec:
    """Parameters of one out-and-back transport.

    Attributes
    ----------
    distance:
        One-way throw d, m.
    duration:
        Total round-trip time T, s.
    sigma:
        Ramp shape parameter; larger values concentrate the motion in the
        middle of each half.
    dt_update:
        Voltage update interval of the waveform synthesizer, s.
    omega:
        Target axial secular frequency maintained during transport, rad/s.
    """

    distance: float = 2e-3
    duration: float = 20e-6
    sigma: float = 2.0
    dt_update: float = 1e-6
    omega: float = 2 * np.pi * 200e3

    def __post_init__(self) -> None:
        for name in ("distance", "duration", "sigma", "dt_update", "omega"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.dt_update > self.duration:
            raise InvalidInputError("dt_update exceeds the transport duration")

    @property
    def tau(self) -> float:
        """Round-trip duration in units of the trap period."""
        return self.duration * self.omega / (2 * np.pi)

    @classmethod
    def from_tau(cls, tau: float, sigma: float = 2.0, **kwargs) -> "RampSpec":
        """Build a spec from the dimensionless duration tau."""
        if tau <= 0:
            raise InvalidInputError("tau must be positive")
        omega = kwargs.pop("omega", cls.omega)
        return cls(duration=tau * 2 * np.pi / omega, sigma=sigma, omega=omega, **kwargs)

    def position(self, t):
        """Ideal well position z0(t) for t in [0, T], relative to the start."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-15) or np.any(t > self.duration * (1 + 1e-12)):
            raise InvalidInputError("t outside [0, T]")
        s = np.minimum(t, self.duration - t)
        x = (4 * s / self.duration - 1) * self.sigma
        return (self.distance / 2) * (1 + erf(x) / erf(self.sigma))

    def velocity(self, t):
        """dz0/dt.  Discontinuous at t = T/2 where the motion reverses."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-15) or np.any(t > self.duration * (1 + 1e-12)):
            raise InvalidInputError("t outside [0, T]")
        s = np.minimum(t, self.duration - t)
        x = (4 * s / self.duration - 1) * self.sigma
        mag = (
            (self.distance / 2)
            * (4 * self.sigma / self.duration)
            * (2 / np.sqrt(np.pi))
            * np.exp(-(x**2))
            / erf(self.sigma)
        )
        return np.where(t <= self.duration / 2, mag, -mag)


@dataclass(frozen=True)
class SolverConfig:
    """Settings of the voltage solver.

    ``ridge`` is the Tikhonov weight on the squared voltage vector; the
    default is small enough not to bias feasible solves and large enough to
    keep the loading-zone electrodes, which barely couple to the
    experimental zone, from running away.
    """

    ridge: float = 1e-6
    v_limit: float = 10.0  # hard voltage bound, matches the DAC full scale
    fit_halfwidth: float = 0.75e-3  # harmonic target window around z0, m
    freq_tolerance: float = 0.01  # relative error allowed on omega
    position_tolerance: float = 1e-6  # allowed |z_min - z0|, m
    well_halfwidth: float = 0.3e-3  # quadratic-fit window used for verification, m

    def __post_init__(self) -> None:
        if self.ridge < 0:
            raise InvalidInputError("ridge must be non-negative")
        if self.v_limit <= 0 or self.fit_halfwidth <= 0 or self.well_halfwidth <= 0:
            raise InvalidInputError("solver windows and voltage limit must be positive")


@dataclass(frozen=True)
class DacSpec:
    """Waveform DAC: resolution, range, update rate, and output filter."""

    bits: int = 16
    full_scale: float = 10.0  # output spans +-full_scale, V
    update_rate: float = 1e6  # Hz
    filter_corner: float = 1e6  # first-order RC output filter, Hz

    def __post_init__(self) -> None:
        if not 2 <= self.bits <= 24:
            raise InvalidInputError("bits must be in [2, 24]")
        if self.full_scale <= 0 or self.update_rate <= 0 or self.filter_corner <= 0:
            raise InvalidInputError("DAC parameters must be positive")

    @property
    def lsb(self) -> float:
        return 2 * self.full_scale / 2**self.bits

    @property
    def dt_update(self) -> float:
        return 1.0 / self.update_rate


@dataclass(frozen=True, eq=False)
class VoltageWaveform:
    """A sequence of voltage rows applied at a fixed update interval.

    ``voltages[k]`` is applied during [k*dt, (k+1)*dt) (zero-order hold);
    the last row is the final settled state.
    """

    voltages: np.ndarray  # (n_rows, n_electrodes), V
    dt: float  # update interval, s
    quantized: bool = False
    filtered: bool = False
    saturated: bool = False  # set when quantization had to clip

    def __post_init__(self) -> None:
        v = np.asarray(self.voltages, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2:
            raise InvalidInputError("waveform needs at least two rows")
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        object.__setattr__(self, "voltages", v)

    @property
    def n_rows(self) -> int:
        return self.voltages.shape[0]

    @property
    def n_electrodes(self) -> int:
        return self.voltages.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_rows - 1) * self.dt

    def row_times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_rows)


def _verify_well(
    basis: AxialBasis,
    voltages: np.ndarray,
    species: IonSpecies,
    z0: float,
    omega: float,
    config: SolverConfig,
):
    """Measure the achieved well; return it or raise with what was achieved."""
    potential = superpose(basis, voltages)
    try:
        well = characterize_well(
            potential,
            species,
            near=z0,
            window=config.fit_halfwidth,
            fit_halfwidth=config.well_halfwidth,
        )
    except NoWellError as exc:
        raise InfeasibleError(
            f"no confining well near z0={z0:.6g} m with the voltage limits"
        ) from exc
    freq_err = abs(well.omega - omega) / omega
    pos_err = abs(well.z_min - z0)
    if freq_err > config.freq_tolerance or pos_err > config.position_tolerance:
        raise InfeasibleError(
            f"well tolerances not met at z0={z0:.6g} m: "
            f"frequency error {freq_err:.3%} (allowed {config.freq_tolerance:.1%}), "
            f"position error {pos_err * 1e6:.3f} um "
            f"(allowed {config.position_tolerance * 1e6:.1f} um)",
            achieved_omega=well.omega,
            achieved_z_min=well.z_min,
        )
    return well


def _fit_arrays(basis, species, z_target, omega_target, config):
    grid = basis.grid
    sel = (grid >= z_target - config.fit_halfwidth) & (
        grid <= z_target + config.fit_halfwidth
    )
    if np.count_nonzero(sel) < max(3 * basis.n_electrodes, 16):
        raise InvalidInputError("fit window contains too few grid points")
    a_mat = basis.response[:, sel].T
    b = species.mass * omega_target**2 * (grid[sel] - z_target) ** 2 / (
        2 * species.charge
    )
    return a_mat, b


def _ridge_solve(a_mat, b, ridge):
    gram = a_mat.T @ a_mat + ridge * np.eye(a_mat.shape[1])
    return np.linalg.solve(gram, a_mat.T @ b)


_MAX_AIM_ITERATIONS = 4


def solve_voltages(
    basis: AxialBasis,
    species: IonSpecies,
    z0: float,
    omega: float,
    config: SolverConfig = SolverConfig(),
) -> np.ndarray:
    """Voltages that produce a harmonic well of frequency ``omega`` at ``z0``.

    Minimizes |A u - b|^2 + ridge * |u|^2 where A samples the electrode
    basis over the fit window and b is the ideal parabola
    m omega^2 (z - z0)^2 / (2 q).  Where the electrode layout is asymmetric
    (near the ends of the array) the least-squares optimum lands slightly
    off target, so the realized well is measured and the aim point
    corrected for the miss, up to a few iterations, until the well sits
    within ``position_tolerance`` of ``z0`` with a frequency within
    ``freq_tolerance``.  Electrodes beyond ``v_limit`` are then pinned at
    the limit and the remainder re-solved once.

    Raises
    ------
    InfeasibleError
        If the tolerances cannot be met, either because the basis cannot
        express the requested well or because clipping distorted it.  The
        error carries the achieved frequency and position.
    """
    n_elec = basis.n_electrodes
    z_target, omega_target = z0, omega
    for attempt in range(_MAX_AIM_ITERATIONS):
        a_mat, b = _fit_arrays(basis, species, z_target, omega_target, config)
        u = _ridge_solve(a_mat, b, config.ridge)
        try:
            # Tolerances are judged on the ideal (unclipped) solution;
            # clipping is a hardware concession checked separately below.
            _verify_well(basis, u, species, z0, omega, config)
        except InfeasibleError as exc:
            if exc.achieved_omega is None or attempt == _MAX_AIM_ITERATIONS - 1:
                raise
            z_target -= exc.achieved_z_min - z0
            omega_target *= omega / exc.achieved_omega
            continue
        break

    over = np.abs(u) > config.v_limit
    if np.any(over):
        pinned = np.clip(u[over], -config.v_limit, config.v_limit)
        free = ~over
        a_free = a_mat[:, free]
        b_eff = b - a_mat[:, over] @ pinned
        gram_f = a_free.T @ a_free + config.ridge * np.eye(free.sum())
        u_free = np.linalg.solve(gram_f, a_free.T @ b_eff)
        u = np.empty(n_elec)
        u[over] = pinned
        u[free] = u_free
        if np.any(np.abs(u) > config.v_limit * (1 + 1e-12)):
            raise InfeasibleError(
                f"voltage solve at z0={z0:.6g} m still exceeds "
                f"+-{config.v_limit:g} V after one clip pass"
            )
        _verify_well(basis, u, species, z0, omega, config)
    return u


def generate_waveform(
    basis: AxialBasis,
    ramp: RampSpec,
    species: IonSpecies,
    origin: float,
    config: SolverConfig = SolverConfig(),
    dac: DacSpec | None = None,
) -> VoltageWaveform:
    """Synthesize the voltage waveform for one out-and-back transport.

    The waveform has ceil(T / dt_update) + 1 rows.  Only the outbound half
    is solved; the return half is the same rows in reverse order, so the
    row at t_k equals the row at T - t_k bit for bit and the waveform is
    exactly time-reversal symmetric even after quantization.

    ``origin`` is the absolute position of the well at t = 0 (the ramp
    itself is relative).  If ``dac`` is given the result is quantized.

    Raises
    ------
    InfeasibleError
        From the underlying solver, annotated with the failing row index.
    """
    n = int(np.ceil(ramp.duration / ramp.dt_update - 1e-9))
    times = ramp.dt_update * np.arange(n + 1)
    # Mirror time: rows beyond T/2 reuse the outbound solves.
    s = np.clip(np.minimum(times, ramp.duration - times), 0.0, ramp.duration / 2)

    rows = np.empty((n + 1, basis.n_electrodes))
    solved: dict[float, np.ndarray] = {}
    for k in range(n // 2 + 1):
        sk = float(s[k])
        if sk not in solved:
            z0 = origin + float(ramp.position(sk))
            try:
                solved[sk] = solve_voltages(basis, species, z0, ramp.omega, config)
            except InfeasibleError as exc:
                raise InfeasibleError(
                    str(exc),
                    achieved_omega=exc.achieved_omega,
                    achieved_z_min=exc.achieved_z_min,
                    time_index=k,
                ) from exc
        rows[k] = solved[sk]
    for k in range(n // 2 + 1, n + 1):
        rows[k] = rows[n - k]

    wave = VoltageWaveform(rows, ramp.dt_update)
    if dac is not None:
        wave = quantize(wave, dac)
    return wave


def morph(
    u_from: Sequence[float], u_to: Sequence[float], steps: int, dt: float
) -> VoltageWaveform:
    """Linear voltage morph from one configuration to another.

    Returns ``steps + 1`` rows; the first row is exactly ``u_from`` and the
    last exactly ``u_to``.
    """
    if steps < 1:
        raise InvalidInputError("morph needs at least one step")
    u_from = np.asarray(u_from, dtype=float)
    u_to = np.asarray(u_to, dtype=float)
    if u_from.shape != u_to.shape or u_from.ndim != 1:
        raise InvalidInputError("morph endpoints must be matching 1-D voltage vectors")
    frac = np.arange(steps + 1)[:, None] / steps
    rows = u_from[None, :] * (1 - frac) + u_to[None, :] * frac
    rows[0] = u_from
    rows[-1] = u_to
    return VoltageWaveform(rows, dt)


def hold(u: Sequence[float], duration: float, dt: float) -> VoltageWaveform:
    """A static configuration held for ``duration`` (rounded up to whole rows)."""
    u = np.asarray(u, dtype=float)
    n = max(1, int(np.ceil(duration / dt - 1e-9)))
    return VoltageWaveform(np.tile(u, (n + 1, 1)), dt)


def quantize(waveform: VoltageWaveform, dac: DacSpec) -> VoltageWaveform:
    """Round every voltage to the DAC grid.

    Values beyond full scale are clipped and flagged via ``saturated``.
    Quantization is idempotent bit for bit: the LSB is an exact binary
    fraction, so re-quantizing reproduces the same codes.
    """
    lsb = dac.lsb
    half_codes = 2 ** (dac.bits - 1)
    codes = np.round(waveform.voltages / lsb)
    saturated = bool(np.any(np.abs(codes) > half_codes))
    codes = np.clip(codes, -half_codes, half_codes)
    return replace(
        waveform,
        voltages=codes * lsb,
        quantized=True,
        saturated=waveform.saturated or saturated,
    )


def time_reverse(waveform: VoltageWaveform) -> VoltageWaveform:
    """The same waveform played backwards (row order reversed)."""
    return replace(waveform, voltages=waveform.voltages[::-1].copy())


def lowpass(
    waveform: VoltageWaveform, dac: DacSpec, oversample: int = 50
) -> VoltageWaveform:
    """First-order RC response of each electrode to the zero-order-hold input.

    Returns a waveform resampled ``oversample`` times finer, with
    ``filtered`` set.  The filter starts settled on the first row.
    """
    if oversample < 2:
        raise InvalidInputError("oversample must be at least 2")
    dt_f = waveform.dt / oversample
    alpha = np.exp(-2 * np.pi * dac.filter_corner * dt_f)
    n_out = (waveform.n_rows - 1) * oversample + 1
    out = np.empty((n_out, waveform.n_electrodes))
    out[0] = waveform.voltages[0]
    v = waveform.voltages[0].copy()
    for k in range(waveform.n_rows - 1):
        target = waveform.voltages[k]
        for j in range(oversample):
            v = target + (v - target) * alpha
            out[k * oversample + j + 1] = v
    return VoltageWaveform(
        out,
        dt_f,
        quantized=waveform.quantized,
        filtered=True,
        saturated=waveform.saturated,
    )


_WAVE_HEADER = re.compile(
    r"^# waveform v1 electrodes=(\d+) dt_us=([0-9.eE+-]+) quantized=(true|false)$"
)


def save_waveform(waveform: VoltageWaveform, path, meta: str | None = None) -> None:
    """Write a waveform table: versioned header, column names, CSV rows."""
    n = waveform.n_electrodes
    header = (
        f"# waveform v1 electrodes={n} dt_us={waveform.dt * 1e6!r} "
        f"quantized={'true' if waveform.quantized else 'false'}"
    )
    cols = ",".join(["t_us"] + [f"U{i + 1}" for i in range(n)])
    times = waveform.row_times() * 1e6
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.write(meta_line(meta))
        fh.write(cols + "\n")
        for k in range(waveform.n_rows):
            row = [repr(float(times[k]))]
            row += [repr(float(v)) for v in waveform.voltages[k]]
            fh.write(",".join(row) + "\n")


def load_waveform(path) -> VoltageWaveform:
    """Read a waveform written by save_waveform."""
    path = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty waveform file", path=path, line=1)
    m = _WAVE_HEADER.match(lines[0])
    if not m:
        raise ParseError(
            "missing or malformed header, expected "
            "'# waveform v1 electrodes=N dt_us=X quantized=BOOL'",
            path=path,
            line=1,
        )
    n = int(m.group(1))
    dt = float(m.group(2)) * 1e-6
    quantized = m.group(3) == "true"
    rows = []
    for lineno, line in data_lines(lines):
        parts = line.split(",")
        if len(parts) != n + 1:
            raise ParseError(
                f"expected {n + 1} columns, got {len(parts)}", path=path, line=lineno
            )
        try:
            rows.append([float(p) for p in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric value", path=path, line=lineno) from None
    if len(rows) < 2:
        raise ParseError("waveform needs at least two rows", path=path, line=len(lines))
    return VoltageWaveform(np.array(rows), dt, quantized=quantized)
