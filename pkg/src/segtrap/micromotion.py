"""RF-phase-correlated fluorescence analysis for micromotion compensation.

Excess micromotion Doppler-modulates the scattering rate at the drive
frequency, so a histogram of photon arrival times folded over the RF period
shows a sinusoidal modulation.  Its amplitude is linear in the applied
compensation voltage near the compensated point; scanning the voltage and
regressing the signed amplitude locates the zero crossing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from ._fileio import data_lines, meta_line
from .errors import FitError, InvalidInputError, ParseError

__all__ = [
    "PhaseHistogram",
    "SineFit",
    "MicromotionScan",
    "CompensationResult",
    "simulate_histogram",
    "fit_sine",
    "flatness_chi2",
    "find_optimum",
    "save_histogram",
    "load_histogram",
    "save_scan",
    "load_scan",
]


@dataclass(eq=False)
class PhaseHistogram:
    """Photon counts folded over one RF period."""

    counts: np.ndarray  # (bins,), integer photon counts

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 8:
            raise InvalidInputError("histogram needs at least 8 phase bins")
        if np.any(counts < 0):
            raise InvalidInputError("photon counts cannot be negative")
        self.counts = counts.astype(np.int64)

    @property
    def bins(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def bin_phases(self) -> np.ndarray:
        """Center phase of each bin, rad."""
        return (np.arange(self.bins) + 0.5) * (2 * np.pi / self.bins)


def simulate_histogram(
    depth: float,
    mean_rate: float,
    duration: float,
    rng: np.random.Generator,
    bins: int = 32,
    phase: float = 0.0,
) -> PhaseHistogram:
    """Poisson histogram with sinusoidal modulation of given depth and phase.

    Bin expectations are ``rate * duration / bins * (1 + depth * sin(theta
    + phase))`` evaluated at the bin centers.
    """
    if not -1 <= depth <= 1:
        raise InvalidInputError("modulation depth must be within [-1, 1]")
    if mean_rate <= 0 or duration <= 0:
        raise InvalidInputError("rate and duration must be positive")
    if bins < 8:
        raise InvalidInputError("histogram needs at least 8 phase bins")
    theta = (np.arange(bins) + 0.5) * (2 * np.pi / bins)
    mean = mean_rate * duration / bins * (1 + depth * np.sin(theta + phase))
    return PhaseHistogram(rng.poisson(mean))


@dataclass(frozen=True)
class SineFit:
    """Weighted least-squares fit of counts to offset + sine.

    ``amplitude`` is the modulation depth relative to the offset, signed by
    the projection of the fitted phase onto the reference phase, so scans
    through a compensated point change sign instead of folding at zero.
    """

    amplitude: float
    amplitude_sigma: float
    phase: float  # rad, of the fitted sine
    offset: float  # counts per bin
    reference_phase: float


def fit_sine(hist: PhaseHistogram, reference_phase: float = 0.0) -> SineFit:
    """Fit the folded histogram with c0 + b sin(theta) + c cos(theta).

    Poisson weighting (variance = expected counts, approximated by observed
    counts clipped below at 1).  Raises FitError on degenerate input.
    """
    counts = hist.counts.astype(float)
    if hist.total == 0:
        raise FitError("histogram is empty")
    theta = hist.bin_phases()
    design = np.column_stack([np.ones_like(theta), np.sin(theta), np.cos(theta)])
    weights = 1.0 / np.maximum(counts, 1.0)
    wd = design * weights[:, None]
    gram = design.T @ wd
    try:
        cov = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise FitError("degenerate phase design") from exc
    beta = cov @ (wd.T @ counts)
    c0, b, c = beta
    if c0 <= 0:
        raise FitError("fitted offset is not positive")

    amp_counts = float(np.hypot(b, c))
    phase = float(np.arctan2(c, b))
    # Signed amplitude: positive when the modulation is in phase with the
    # reference, negative when inverted.
    sign = 1.0 if np.cos(phase - reference_phase) >= 0 else -1.0
    depth = sign * amp_counts / c0

    if amp_counts == 0:
        grad = np.array([-0.0, 1.0 / c0, 0.0])  # direction is arbitrary at zero
    else:
        grad = np.array(
            [-amp_counts / c0**2, b / (amp_counts * c0), c / (amp_counts * c0)]
        )
    var = float(grad @ cov @ grad)
    if var < 0:
        raise FitError("singular covariance in amplitude propagation")
    return SineFit(depth, float(np.sqrt(var)), phase, float(c0), reference_phase)


def flatness_chi2(hist: PhaseHistogram) -> tuple[float, int, float]:
    """Chi-square of the histogram against a flat rate.

    Returns (chi2, dof, p_value); a compensated ion should be compatible
    with flat at the usual 95 percent level.
    """
    if hist.total == 0:
        raise FitError("histogram is empty")
    mean = hist.total / hist.bins
    chi2 = float(np.sum((hist.counts - mean) ** 2 / mean))
    dof = hist.bins - 1
    return chi2, dof, float(sstats.chi2.sf(chi2, dof))


@dataclass(eq=False)
class MicromotionScan:
    """Signed modulation amplitudes measured at several compensation voltages."""

    voltages: np.ndarray  # V
    amplitudes: np.ndarray  # modulation depth, signed
    sigmas: np.ndarray  # one sigma per amplitude

    def __post_init__(self) -> None:
        v = np.asarray(self.voltages, dtype=float)
        a = np.asarray(self.amplitudes, dtype=float)
        s = np.asarray(self.sigmas, dtype=float)
        if not (v.shape == a.shape == s.shape) or v.ndim != 1:
            raise InvalidInputError("scan arrays must be matching 1-D")
        if v.size < 3:
            raise InvalidInputError("scan needs at least 3 voltage points")
        if np.any(s <= 0):
            raise InvalidInputError("amplitude sigmas must be positive")
        self.voltages, self.amplitudes, self.sigmas = v, a, s


@dataclass(frozen=True)
class CompensationResult:
    """Zero crossing of the modulation amplitude versus voltage."""

    v_opt: float
    v_sigma: float
    slope: float  # depth per volt
    intercept: float
    extrapolated: bool  # optimum outside the scanned range


def find_optimum(scan: MicromotionScan) -> CompensationResult:
    """Weighted linear regression of amplitude on voltage; root and sigma.

    The uncertainty comes from propagating the regression coefficient
    covariance through the root v = -a/b.  ``extrapolated`` flags an
    optimum outside the scanned voltage range, where the linearity
    assumption is unchecked.
    """
    v, a, s = scan.voltages, scan.amplitudes, scan.sigmas
    w = 1.0 / s**2
    design = np.column_stack([np.ones_like(v), v])
    gram = design.T @ (design * w[:, None])
    try:
        cov = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise FitError("degenerate voltage scan") from exc
    beta = cov @ (design * w[:, None]).T @ a
    intercept, slope = float(beta[0]), float(beta[1])
    if slope == 0 or abs(slope) * (v.max() - v.min()) < 1e-12:
        raise FitError("no amplitude gradient across the scan")
    v_opt = -intercept / slope
    # Delta method on v = -intercept/slope.
    grad = np.array([-1.0 / slope, intercept / slope**2])
    var = float(grad @ cov @ grad)
    if var < 0:
        raise FitError("singular covariance in root propagation")
    extrapolated = not (v.min() <= v_opt <= v.max())
    return CompensationResult(
        float(v_opt), float(np.sqrt(var)), slope, intercept, extrapolated
    )


_HIST_HEADER = re.compile(r"^# phase-histogram v1 bins=(\d+)$")


def save_histogram(hist: PhaseHistogram, path, meta: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"# phase-histogram v1 bins={hist.bins}\n")
        fh.write(meta_line(meta))
        fh.write("phase_bin_index,counts\n")
        for i, c in enumerate(hist.counts):
            fh.write(f"{i},{int(c)}\n")


def load_histogram(path) -> PhaseHistogram:
    path = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty histogram file", path=path, line=1)
    m = _HIST_HEADER.match(lines[0])
    if not m:
        raise ParseError(
            "missing or malformed header, expected '# phase-histogram v1 bins=N'",
            path=path,
            line=1,
        )
    bins = int(m.group(1))
    counts = np.zeros(bins, dtype=np.int64)
    seen = np.zeros(bins, dtype=bool)
    for lineno, line in data_lines(lines):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(
                f"expected 2 columns, got {len(parts)}", path=path, line=lineno
            )
        try:
            idx, c = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("non-numeric value", path=path, line=lineno) from None
        if not 0 <= idx < bins or seen[idx]:
            raise ParseError(f"bad or repeated bin index {idx}", path=path, line=lineno)
        counts[idx] = c
        seen[idx] = True
    if not np.all(seen):
        raise ParseError(f"missing bins in histogram of {bins}", path=path)
    return PhaseHistogram(counts)


_SCAN_HEADER = re.compile(r"^# micromotion-scan v1 points=(\d+)$")


def save_scan(scan: MicromotionScan, path, meta: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"# micromotion-scan v1 points={scan.voltages.size}\n")
        fh.write(meta_line(meta))
        fh.write("voltage_V,amplitude,amplitude_sigma\n")
        for v, a, s in zip(scan.voltages, scan.amplitudes, scan.sigmas):
            fh.write(f"{float(v)!r},{float(a)!r},{float(s)!r}\n")


def load_scan(path) -> MicromotionScan:
    path = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty scan file", path=path, line=1)
    if not _SCAN_HEADER.match(lines[0]):
        raise ParseError(
            "missing or malformed header, expected '# micromotion-scan v1 points=N'",
            path=path,
            line=1,
        )
    rows = []
    for lineno, line in data_lines(lines):
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(
                f"expected 3 columns, got {len(parts)}", path=path, line=lineno
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric value", path=path, line=lineno) from None
    if len(rows) < 3:
        raise ParseError("scan needs at least 3 points", path=path, line=len(lines))
    arr = np.array(rows)
    return MicromotionScan(arr[:, 0], arr[:, 1], arr[:, 2])
