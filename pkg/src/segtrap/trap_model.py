"""Electrode geometry, axial potential basis, and static trap characterization.

The axial potential of each DC electrode pair is modeled with a flat-top
kernel.  A pair of width ``a`` centered at ``z_i``, held at 1 V with every
other electrode grounded, contributes

    phi_i(z) = (1/pi) * [atan((z - z_i + a/2) / rho) - atan((z - z_i - a/2) / rho)]

where ``rho`` is the ion-electrode distance.  The kernel has the two limits
that matter: directly above a wide electrode the potential saturates toward
the applied voltage, and far away it falls off algebraically like a line
charge seen from distance |z - z_i|.  Superposition of these single-electrode
responses gives the on-axis potential for any voltage set.

The same module covers static characterization built on that potential:
locating wells, extracting secular frequencies and trap depths, the radial
pseudopotential parameters of the RF drive, and equilibrium positions of
small ion crystals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import fsolve, minimize_scalar

from ._fileio import data_lines, meta_line
from .constants import IonSpecies, epsilon_0
from .errors import InvalidInputError, NoWellError, ParseError

__all__ = [
    "Segment",
    "TrapGeometry",
    "AxialBasis",
    "AxialPotential",
    "WellCharacterization",
    "RadialCharacterization",
    "compute_basis",
    "default_grid",
    "superpose",
    "characterize_well",
    "characterize_radial",
    "ion_crystal_positions",
    "save_basis",
    "load_basis",
]

ZONES = ("loading", "taper", "experimental")


@dataclass(frozen=True)
class Segment:
    """One DC electrode pair along the trap axis."""

    index: int  # 1-based, ordered along the axis
    center: float  # m
    width: float  # m
    gap: float  # ion-electrode distance rho, m
    zone: str

    def __post_init__(self) -> None:
        if self.zone not in ZONES:
            raise InvalidInputError(f"unknown zone {self.zone!r}, expected one of {ZONES}")
        if self.width <= 0 or self.gap <= 0:
            raise InvalidInputError("segment width and gap must be positive")


@dataclass(frozen=True)
class TrapGeometry:
    """Segmented-electrode layout of the linear trap.

    The default layout has 15 segment pairs: a loading region of wide
    segments, a two-segment taper, and a string of narrow experimental
    segments, separated by insulation grooves.  Neighboring segment centers
    are spaced by the mean of their widths plus the groove.
    """

    segments: tuple[Segment, ...]
    groove: float = 120e-6
    radial_r0: float = 1e-3  # blade-to-axis distance where the RF confines, m

    def __post_init__(self) -> None:
        if len(self.segments) < 1:
            raise InvalidInputError("geometry needs at least one segment")
        centers = self.centers
        if np.any(np.diff(centers) <= 0):
            raise InvalidInputError("segment centers must be strictly increasing")

    @property
    def n_electrodes(self) -> int:
        return len(self.segments)

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.segments])

    @property
    def widths(self) -> np.ndarray:
        return np.array([s.width for s in self.segments])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([s.gap for s in self.segments])

    @property
    def span(self) -> tuple[float, float]:
        """Outer edges of the first and last segment, m."""
        first, last = self.segments[0], self.segments[-1]
        return (first.center - first.width / 2, last.center + last.width / 2)

    @classmethod
    def build(
        cls,
        n_loading: int = 4,
        n_taper: int = 2,
        n_experimental: int = 9,
        width_loading: float = 2e-3,
        width_experimental: float = 0.5e-3,
        groove: float = 120e-6,
        gap_loading: float = 2e-3,
        gap_taper: float = 1.5e-3,
        gap_experimental: float = 1e-3,
        radial_r0: float = 1e-3,
    ) -> "TrapGeometry":
        """Construct a loading/taper/experimental segment layout.

        Taper segments keep the loading width; only the blade separation
        narrows there.  The first segment is centered at z = 0.
        """
        widths = (
            [width_loading] * (n_loading + n_taper) + [width_experimental] * n_experimental
        )
        zones = ["loading"] * n_loading + ["taper"] * n_taper + [
            "experimental"
        ] * n_experimental
        gaps = [gap_loading] * n_loading + [gap_taper] * n_taper + [
            gap_experimental
        ] * n_experimental
        segments = []
        center = 0.0
        for i, (w, g, zone) in enumerate(zip(widths, gaps, zones)):
            if i > 0:
                center += (widths[i - 1] + w) / 2 + groove
            segments.append(Segment(i + 1, center, w, g, zone))
        return cls(tuple(segments), groove=groove, radial_r0=radial_r0)

    @classmethod
    def default(cls) -> "TrapGeometry":
        return cls.build()


def default_grid(
    geometry: TrapGeometry, step: float = 2e-6, margin: float = 3e-3
) -> np.ndarray:
    """Axial sample grid covering the electrode stack plus a margin.

    The margin must be large enough that escape over the outermost barrier is
    visible to depth calculations.
    """
    if step <= 0 or margin <= 0:
        raise InvalidInputError("grid step and margin must be positive")
    lo, hi = geometry.span
    n = int(np.ceil((hi - lo + 2 * margin) / step)) + 1
    return lo - margin + step * np.arange(n)


@dataclass(frozen=True, eq=False)
class AxialBasis:
    """Tabulated single-electrode axial responses.

    ``response[i, k]`` is the on-axis potential at ``grid[k]`` produced by
    electrode pair ``i`` at 1 V with all others grounded.
    """

    grid: np.ndarray  # (n_grid,), strictly increasing, m
    response: np.ndarray  # (n_electrodes, n_grid), V per applied V

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        resp = np.asarray(self.response, dtype=float)
        if grid.ndim != 1 or grid.size < 4:
            raise InvalidInputError("basis grid must be 1-D with at least 4 points")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInputError("basis grid must be strictly increasing")
        if resp.ndim != 2 or resp.shape[1] != grid.size:
            raise InvalidInputError(
                f"response shape {resp.shape} does not match grid of {grid.size} points"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "response", resp)

    @property
    def n_electrodes(self) -> int:
        return self.response.shape[0]

    def derivative_table(self) -> np.ndarray:
        """Spatial derivative of each response, tabulated on the same grid.

        Computed once per basis through a cubic spline of the tabulated
        response and cached, so imported (non-analytic) bases get the same
        treatment as computed ones.
        """
        cached = getattr(self, "_dtable", None)
        if cached is None:
            cached = np.array(
                [CubicSpline(self.grid, row)(self.grid, 1) for row in self.response]
            )
            object.__setattr__(self, "_dtable", cached)
        return cached


def compute_basis(geometry: TrapGeometry, grid: np.ndarray | None = None) -> AxialBasis:
    """Evaluate the flat-top kernel for every segment on ``grid``."""
    if grid is None:
        grid = default_grid(geometry)
    grid = np.asarray(grid, dtype=float)
    z = grid[None, :]
    zi = geometry.centers[:, None]
    half = geometry.widths[:, None] / 2
    rho = geometry.gaps[:, None]
    resp = (np.arctan((z - zi + half) / rho) - np.arctan((z - zi - half) / rho)) / np.pi
    return AxialBasis(grid, resp)


class AxialPotential:
    """On-axis potential for one voltage set, with spline evaluation.

    Callable: ``potential(z)`` returns volts; ``potential.gradient(z)``
    returns V/m.  Evaluation outside the tabulated grid is refused rather
    than extrapolated.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise InvalidInputError("grid and values must be matching 1-D arrays")
        self.grid = grid
        self.values = values
        self._spline = CubicSpline(grid, values)

    def _check_domain(self, z: np.ndarray) -> None:
        if np.any(z < self.grid[0]) or np.any(z > self.grid[-1]):
            raise InvalidInputError(
                f"z outside tabulated range [{self.grid[0]:.6g}, {self.grid[-1]:.6g}] m"
            )

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        self._check_domain(z)
        return self._spline(z)

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        self._check_domain(z)
        return self._spline(z, 1)


def superpose(
    basis: AxialBasis, voltages: Sequence[float], stray_field: float = 0.0
) -> AxialPotential:
    """Potential from applying ``voltages`` (one per electrode pair).

    ``stray_field`` adds a uniform axial electric field in V/m, tilting the
    potential; it stands in for uncompensated surface charging.
    """
    voltages = np.asarray(voltages, dtype=float)
    if voltages.shape != (basis.n_electrodes,):
        raise InvalidInputError(
            f"expected {basis.n_electrodes} voltages, got shape {voltages.shape}"
        )
    values = voltages @ basis.response
    if stray_field != 0.0:
        values = values - stray_field * basis.grid
    return AxialPotential(basis.grid, values)


@dataclass(frozen=True)
class WellCharacterization:
    """Local properties of one potential well."""

    z_min: float  # m
    omega: float  # axial secular frequency, rad/s
    depth_ev: float  # lowest escape barrier relative to the minimum, eV
    curvature: float  # d2(potential)/dz2 at the minimum, V/m^2

    @property
    def frequency(self) -> float:
        """Secular frequency in Hz."""
        return self.omega / (2 * np.pi)


def characterize_well(
    potential: AxialPotential,
    species: IonSpecies,
    near: float | None = None,
    window: float = 0.5e-3,
    fit_halfwidth: float = 0.5e-3,
) -> WellCharacterization:
    """Locate a potential well and extract frequency and depth.

    Parameters
    ----------
    near:
        Search for the minimum within ``near +- window``; default is the
        whole tabulated range.
    fit_halfwidth:
        Half-width of the quadratic fit used for the curvature, typically
        one local electrode width.

    The minimum is refined off-grid on the spline.  The curvature comes from
    a least-squares parabola over ``z_min +- fit_halfwidth``, which is what
    an experiment calibrating against measured frequencies effectively does,
    and the depth is the lower of the two escape barriers toward either end
    of the tabulated region.

    Raises
    ------
    NoWellError
        If no interior minimum exists in the search range or the local
        curvature is not confining.
    """
    grid, values = potential.grid, potential.values
    sign = 1.0 if species.charge > 0 else -1.0
    eff = sign * values  # positive ions seek potential minima, negative ions maxima

    if near is None:
        # The trapping well need not be the global minimum: endcap-style
        # configurations confine between two hills while the potential falls
        # off outside them.  Pick the local minimum with the deepest barriers.
        left_max = np.maximum.accumulate(eff)
        right_max = np.maximum.accumulate(eff[::-1])[::-1]
        interior = np.flatnonzero((eff[1:-1] < eff[:-2]) & (eff[1:-1] <= eff[2:])) + 1
        if interior.size == 0:
            raise NoWellError("potential has no interior local minimum")
        depths = np.minimum(left_max[interior], right_max[interior]) - eff[interior]
        idx = int(interior[np.argmax(depths)])
        if depths.max() <= 0:
            raise NoWellError("no confining barriers around any local minimum")
    else:
        lo = int(np.searchsorted(grid, near - window))
        hi = int(np.searchsorted(grid, near + window, side="right"))
        if hi - lo < 5:
            raise InvalidInputError("search window contains too few grid points")
        idx = lo + int(np.argmin(eff[lo:hi]))
        if idx <= lo or idx >= hi - 1 or idx == 0 or idx == grid.size - 1:
            raise NoWellError("no interior potential minimum in the search range")

    # Off-grid refinement between the neighbors of the discrete minimum.
    res = minimize_scalar(
        lambda z: sign * float(potential(z)),
        bounds=(grid[idx - 1], grid[idx + 1]),
        method="bounded",
        options={"xatol": 1e-12},
    )
    z_min = float(res.x)

    fit_lo = int(np.searchsorted(grid, z_min - fit_halfwidth))
    fit_hi = int(np.searchsorted(grid, z_min + fit_halfwidth, side="right"))
    if fit_hi - fit_lo < 5:
        raise InvalidInputError("curvature fit window contains too few grid points")
    dz = grid[fit_lo:fit_hi] - z_min
    coeffs = np.polynomial.polynomial.polyfit(dz, values[fit_lo:fit_hi], 2)
    curvature = 2.0 * coeffs[2]
    if sign * curvature <= 0:
        raise NoWellError("stationary point is not confining for this species")
    omega = float(np.sqrt(sign * curvature * species.charge / species.mass))

    # Escape barrier: the highest point the ion must cross on the way to
    # either end of the region, whichever side is lower.
    barrier_left = float(np.max(eff[: idx + 1]))
    barrier_right = float(np.max(eff[idx:]))
    v_min = sign * float(potential(z_min))
    depth_ev = (min(barrier_left, barrier_right) - v_min) * abs(species.charge_e)

    return WellCharacterization(z_min, omega, depth_ev, curvature)


@dataclass(frozen=True)
class RadialCharacterization:
    """Lowest-order pseudopotential description of the RF confinement."""

    mathieu_q: float
    omega_radial: float  # rad/s
    depth_ev: float  # ideal-quadrupole estimate, see characterize_radial

    @property
    def frequency(self) -> float:
        return self.omega_radial / (2 * np.pi)


def characterize_radial(
    species: IonSpecies,
    drive_frequency: float,
    v_pp: float,
    kappa: float,
    r0: float,
) -> RadialCharacterization:
    """Radial stability parameter, secular frequency, and depth estimate.

    Parameters
    ----------
    drive_frequency:
        RF drive in rad/s.
    v_pp:
        Peak-to-peak RF voltage on the blades.
    kappa:
        Geometric efficiency of the blade pair relative to an ideal
        quadrupole (1 for ideal hyperbolic electrodes).
    r0:
        Blade-to-axis distance, m.

    The depth is the ideal-quadrupole value q*V0/8 at the blade radius.
    Real blade shapes shield part of the field, so measured depths come out
    lower; treat this number as an upper bound.
    """
    if drive_frequency <= 0 or v_pp <= 0 or r0 <= 0:
        raise InvalidInputError("drive frequency, voltage, and r0 must be positive")
    v0 = v_pp / 2
    q = 2 * abs(species.charge) * kappa * v0 / (species.mass * r0**2 * drive_frequency**2)
    omega_radial = q * drive_frequency / (2 * np.sqrt(2))
    depth_ev = q * v0 / 8 * abs(species.charge_e)
    return RadialCharacterization(q, omega_radial, depth_ev)


def _crystal_length_scale(species: IonSpecies, omega: float) -> float:
    return (
        species.charge**2 / (4 * np.pi * epsilon_0 * species.mass * omega**2)
    ) ** (1 / 3)


def _crystal_equations(u: np.ndarray) -> np.ndarray:
    # Force balance in units of the Coulomb length scale:
    # u_i = sum_{j<i} 1/(u_i-u_j)^2 - sum_{j>i} 1/(u_j-u_i)^2
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    coulomb = np.sign(diff) / diff**2
    return u - coulomb.sum(axis=1)


def ion_crystal_positions(species: IonSpecies, omega: float, n: int) -> np.ndarray:
    """Equilibrium positions of ``n`` identical ions in a harmonic well.

    Returns positions in meters, sorted, centered on the well minimum.
    Closed forms are used for n <= 3; larger crystals are solved by Newton
    iteration grown one ion at a time from the three-ion chain, which
    converges reliably up to the supported n = 30.
    """
    if not 1 <= n <= 30:
        raise InvalidInputError(f"crystal size must be in [1, 30], got {n}")
    if omega <= 0:
        raise InvalidInputError("axial frequency must be positive")
    scale = _crystal_length_scale(species, omega)
    if n == 1:
        return np.zeros(1)
    if n == 2:
        u = (1 / 4) ** (1 / 3)
        return scale * np.array([-u, u])
    if n == 3:
        u = (5 / 4) ** (1 / 3)
        return scale * np.array([-u, 0.0, u])

    u = np.array([-((5 / 4) ** (1 / 3)), 0.0, (5 / 4) ** (1 / 3)])
    for k in range(4, n + 1):
        # Seed: previous chain stretched slightly, one ion appended outside.
        guess = np.concatenate([u * (k / (k - 1)) ** 0.2, [u[-1] + (u[-1] - u[-2])]])
        guess.sort()
        guess -= guess.mean()
        u, info, status, msg = fsolve(
            _crystal_equations, guess, full_output=True, xtol=1e-14
        )
        if status != 1 or np.max(np.abs(_crystal_equations(u))) > 1e-9:
            raise InvalidInputError(f"crystal solve failed at n={k}: {msg}")
        u.sort()
    return scale * u


_BASIS_HEADER = re.compile(r"^# axial-basis v1 electrodes=(\d+)$")


def save_basis(basis: AxialBasis, path, meta: str | None = None) -> None:
    """Write a basis table: versioned header, column names, CSV rows."""
    n = basis.n_electrodes
    cols = ",".join(["z_m"] + [f"phi_{i + 1}" for i in range(n)])
    with open(path, "w") as fh:
        fh.write(f"# axial-basis v1 electrodes={n}\n")
        fh.write(meta_line(meta))
        fh.write(cols + "\n")
        for k in range(basis.grid.size):
            row = [repr(float(basis.grid[k]))]
            row += [repr(float(v)) for v in basis.response[:, k]]
            fh.write(",".join(row) + "\n")


def load_basis(path) -> AxialBasis:
    """Read a basis table written by save_basis.

    Raises ParseError with the offending line number on malformed input.
    """
    path = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty basis file", path=path, line=1)
    m = _BASIS_HEADER.match(lines[0])
    if not m:
        raise ParseError(
            "missing or malformed header, expected '# axial-basis v1 electrodes=N'",
            path=path,
            line=1,
        )
    n = int(m.group(1))
    if len(lines) < 3:
        raise ParseError("basis file has no data rows", path=path, line=len(lines))
    expected_cols = n + 1
    grid = []
    resp_rows = []
    for lineno, line in data_lines(lines):
        parts = line.split(",")
        if len(parts) != expected_cols:
            raise ParseError(
                f"expected {expected_cols} columns, got {len(parts)}",
                path=path,
                line=lineno,
            )
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric value", path=path, line=lineno) from None
        grid.append(vals[0])
        resp_rows.append(vals[1:])
    try:
        return AxialBasis(np.array(grid), np.array(resp_rows).T)
    except InvalidInputError as exc:
        raise ParseError(f"inconsistent basis table: {exc}", path=path) from exc
