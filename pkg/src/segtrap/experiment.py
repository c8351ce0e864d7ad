"""Full shuttle-experiment sequences, survival statistics, and sweeps.

One trial follows a cold ion through: initialization in the loading well at
the Doppler limit with a random oscillation phase, a voltage morph from the
loading configuration to the transport well, the out-and-back transport
itself, the morph back, anomalous heating over the elapsed wall time, and a
fluorescence recovery that measures what the trip cost.

Survival combines three channels: actual escape over a barrier during the
full-potential integration, a transient-energy proxy (energy above a fixed
fraction of the shallowest well depth along the track), and an optional
energy-independent background loss per attempt.  Sequences of trials chain
into run-length records, from which the per-attempt success probability is
estimated by maximum likelihood with censoring.
"""

from __future__ import annotations

import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from ._fileio import data_lines, meta_line
from .constants import IonSpecies, elementary_charge
from .cooling import (
    FluorescenceTrace,
    HeatingModel,
    LaserParams,
    apply_heating,
    doppler_limit_energy,
    simulate_recovery,
)
from .dynamics import WaveformPhysics, _integrate_waveform_batch, classify_loss
from .errors import InvalidInputError, ParseError
from .trap_model import AxialBasis, characterize_well, superpose
from .waveform import (
    DacSpec,
    RampSpec,
    SolverConfig,
    VoltageWaveform,
    generate_waveform,
    hold,
    morph,
    quantize,
    solve_voltages,
)

__all__ = [
    "TrapSetup",
    "SequenceSpec",
    "SequenceOutcome",
    "SequenceContext",
    "SuccessRecord",
    "SuccessEstimate",
    "TauSweepRow",
    "SigmaSweepRow",
    "run_sequence",
    "run_trials",
    "outcomes_to_record",
    "estimate_success",
    "sweep_tau",
    "sweep_sigma",
    "save_record",
    "load_record",
]


@dataclass(frozen=True, eq=False)
class TrapSetup:
    """Everything fixed about the apparatus for a set of runs."""

    basis: AxialBasis
    species: IonSpecies
    solver: SolverConfig = SolverConfig()
    dac: DacSpec | None = DacSpec()


def _default_load_voltages() -> np.ndarray:
    # Asymmetric endcap pair around the loading site of the default layout.
    u = np.zeros(15)
    u[6] = 6.0
    u[12] = 8.0
    return u


@dataclass(frozen=True, eq=False)
class SequenceSpec:
    """Parameters of one shuttle sequence.

    ``morph_mismatch`` displaces the transport well target from the loading
    well minimum, deliberately de-tuning the hand-off to probe morph
    excitation.  ``replace_transport_with_wait`` swaps the transport for an
    equal-duration hold, isolating what the morphs alone contribute.
    ``settle_wait``/``settle_jitter`` insert a hold (fixed plus an
    independent per-trial uniform draw) on each side of the transport;
    jitter decorrelates the oscillation phases of the morph and transport
    kicks so their mean energies add.
    """

    ramp: RampSpec = RampSpec()
    load_voltages: np.ndarray = field(default_factory=_default_load_voltages)
    morph_steps: int = 10
    morph_dt: float = 1e-6
    laser: LaserParams = LaserParams()
    heating: HeatingModel = HeatingModel()
    loss_threshold: float = 0.30
    background_loss: float = 0.0
    morph_mismatch: float = 0.0  # m
    replace_transport_with_wait: bool = False
    settle_wait: float = 0.0  # s
    settle_jitter: float = 0.0  # s
    recovery_bin: float = 1e-3  # s
    recovery_duration: float | None = 1.0  # s
    seed: int = 0

    def __post_init__(self) -> None:
        lv = np.asarray(self.load_voltages, dtype=float)
        if lv.ndim != 1:
            raise InvalidInputError("load_voltages must be a 1-D vector")
        object.__setattr__(self, "load_voltages", lv)
        if self.morph_steps < 1:
            raise InvalidInputError("morph_steps must be at least 1")
        if not 0 < self.loss_threshold <= 1:
            raise InvalidInputError("loss_threshold must be in (0, 1]")
        if not 0 <= self.background_loss < 1:
            raise InvalidInputError("background_loss must be in [0, 1)")
        if self.settle_wait < 0 or self.settle_jitter < 0:
            raise InvalidInputError("waits must be non-negative")


@dataclass(frozen=True)
class SequenceOutcome:
    """What one trial produced."""

    trial: int
    survived: bool
    escaped: bool
    exceeded_threshold: bool
    background_lost: bool
    e_initial_ev: float
    e_transport_ev: float  # right after the morph back, before heating
    e_final_ev: float  # after heating over the wall time
    e_max_ev: float
    max_excursion: float  # m, during transport, relative to the moving well
    wall_time: float  # s
    t_recover: float | None
    trace: FluorescenceTrace | None = None


class SequenceContext:
    """Prebuilt waveforms and cached row splines shared across trials."""

    def __init__(self, spec: SequenceSpec, setup: TrapSetup):
        self.spec = spec
        self.setup = setup
        basis, species = setup.basis, setup.species

        load_potential = superpose(basis, spec.load_voltages)
        self.load_well = characterize_well(load_potential, species)
        origin = self.load_well.z_min + spec.morph_mismatch

        u_start = solve_voltages(basis, species, origin, spec.ramp.omega, setup.solver)
        self.u_start = u_start

        morph_in = morph(spec.load_voltages, u_start, spec.morph_steps, spec.morph_dt)
        morph_out = morph(u_start, spec.load_voltages, spec.morph_steps, spec.morph_dt)
        if spec.replace_transport_with_wait:
            transport = hold(u_start, spec.ramp.duration, spec.ramp.dt_update)
        else:
            transport = generate_waveform(
                basis, spec.ramp, species, origin, setup.solver, dac=None
            )
        if setup.dac is not None:
            morph_in = quantize(morph_in, setup.dac)
            morph_out = quantize(morph_out, setup.dac)
            transport = quantize(transport, setup.dac)
        self.morph_in = morph_in
        self.morph_out = morph_out
        self.transport = transport

        self.phys_morph_in = WaveformPhysics(
            basis, morph_in, species, track_start=self.load_well.z_min
        )
        self.phys_transport = WaveformPhysics(basis, transport, species, track_start=origin)
        self.phys_morph_out = WaveformPhysics(basis, morph_out, species, track_start=origin)

        self.min_depth_ev = min(
            self.load_well.depth_ev,
            _min_track_depth(basis, species, transport, origin, spec.ramp),
        )

    def wait_waveform(self, duration: float) -> tuple[VoltageWaveform, WaveformPhysics]:
        wf = hold(self.u_start, duration, self.spec.ramp.dt_update)
        if self.setup.dac is not None:
            wf = quantize(wf, self.setup.dac)
        phys = WaveformPhysics(
            self.setup.basis,
            wf,
            self.setup.species,
            track_start=self.load_well.z_min + self.spec.morph_mismatch,
        )
        return wf, phys


def _min_track_depth(
    basis: AxialBasis,
    species: IonSpecies,
    transport: VoltageWaveform,
    origin: float,
    ramp: RampSpec,
) -> float:
    """Shallowest well depth among the unique transport rows, eV.

    The mirrored second half repeats the first, so only the outbound rows
    are examined.  Depth is the lower escape barrier relative to the well
    minimum, from the tabulated potential directly.
    """
    grid = basis.grid
    sign = 1.0 if species.charge > 0 else -1.0
    n_half = transport.n_rows // 2
    times = transport.dt * np.arange(n_half + 1)
    s = np.clip(np.minimum(times, ramp.duration - times), 0.0, ramp.duration / 2)
    track = origin + np.asarray(ramp.position(s), dtype=float)
    depth = np.inf
    for k in range(n_half + 1):
        w = sign * (transport.voltages[k] @ basis.response)
        lo = int(np.searchsorted(grid, track[k] - 0.3e-3))
        hi = int(np.searchsorted(grid, track[k] + 0.3e-3, side="right"))
        i_min = lo + int(np.argmin(w[lo:hi]))
        barrier = min(np.max(w[: i_min + 1]), np.max(w[i_min:]))
        depth = min(depth, (barrier - w[i_min]) * abs(species.charge_e))
    return float(depth)


def run_sequence(
    spec: SequenceSpec,
    setup: TrapSetup,
    trial: int = 0,
    context: SequenceContext | None = None,
    simulate_cooling: bool = True,
    store_trace: bool = False,
) -> SequenceOutcome:
    """Run one full shuttle trial.

    ``simulate_cooling`` adds the recovery simulation after the shuttle,
    filling ``t_recover``; the binned trace itself is kept only when
    ``store_trace`` is also set.  Sweeps turn cooling off since they only
    need the mechanical outcome.

    Deterministic for a given (spec.seed, trial) pair; the only randomness
    is the initial oscillation phase, the optional settle jitter, and the
    background-loss draw, all taken from a generator seeded with exactly
    that pair.
    """
    if context is None:
        context = SequenceContext(spec, setup)
    species = setup.species
    rng = np.random.default_rng([spec.seed, trial])
    phase = rng.uniform(0.0, 2 * np.pi)
    if spec.settle_jitter > 0:
        jitter_in = rng.uniform(0.0, spec.settle_jitter)
        jitter_out = rng.uniform(0.0, spec.settle_jitter)
    else:
        jitter_in = jitter_out = 0.0
    background_lost = bool(rng.random() < spec.background_loss)

    e0_ev = doppler_limit_energy(spec.laser)
    e0 = e0_ev * elementary_charge
    well = context.load_well
    amp = np.sqrt(2 * e0 / (species.mass * well.omega**2))
    z = well.z_min + amp * np.sin(phase)
    v = amp * well.omega * np.cos(phase)

    steps = [(context.morph_in, context.phys_morph_in)]
    wait_in = spec.settle_wait + jitter_in
    if wait_in > 0:
        steps.append(context.wait_waveform(wait_in))
    steps.append((context.transport, context.phys_transport))
    wait_out = spec.settle_wait + jitter_out
    if wait_out > 0:
        steps.append(context.wait_waveform(wait_out))
    steps.append((context.morph_out, context.phys_morph_out))

    e_max = 0.0
    excursion = 0.0
    wall_time = 0.0
    escaped = False
    for wf, phys in steps:
        times, big_z, big_v, big_e, z_well, active, _ = _integrate_waveform_batch(
            phys, np.array([z]), np.array([v]), None
        )
        z, v = float(big_z[-1, 0]), float(big_v[-1, 0])
        e_max = max(e_max, float(np.nanmax(big_e[:, 0])))
        if wf is context.transport:
            excursion = float(np.max(np.abs(big_z[:, 0] - z_well)))
        wall_time += wf.duration
        if not bool(active[0]):
            escaped = True
            break

    if escaped:
        e_transport_ev = float("nan")
    else:
        e_transport_ev = float(big_e[-1, 0]) / elementary_charge
    e_max_ev = e_max / elementary_charge
    exceeded = classify_loss(e_max_ev, context.min_depth_ev, spec.loss_threshold)
    survived = not (escaped or exceeded or background_lost)

    e_final_ev = float("nan")
    t_recover = None
    trace = None
    if not escaped:
        e_final_ev = apply_heating(e_transport_ev, spec.heating, wall_time)
        if simulate_cooling:
            trace = simulate_recovery(
                e_final_ev,
                spec.laser,
                well.omega,
                species,
                duration=spec.recovery_duration,
                bin_width=spec.recovery_bin,
            )
            t_recover = trace.t_recover

    return SequenceOutcome(
        trial=trial,
        survived=survived,
        escaped=escaped,
        exceeded_threshold=exceeded,
        background_lost=background_lost,
        e_initial_ev=e0_ev,
        e_transport_ev=e_transport_ev,
        e_final_ev=e_final_ev,
        e_max_ev=e_max_ev,
        max_excursion=excursion,
        wall_time=wall_time,
        t_recover=t_recover,
        trace=trace if store_trace else None,
    )


def _run_chunk(
    spec: SequenceSpec,
    setup: TrapSetup,
    trials: list[int],
    simulate_cooling: bool,
    store_traces: bool,
):
    context = SequenceContext(spec, setup)
    return [
        run_sequence(
            spec,
            setup,
            trial=t,
            context=context,
            simulate_cooling=simulate_cooling,
            store_trace=store_traces,
        )
        for t in trials
    ]


def run_trials(
    spec: SequenceSpec,
    setup: TrapSetup,
    n_trials: int,
    jobs: int = 1,
    simulate_cooling: bool = False,
    store_traces: bool = False,
) -> list[SequenceOutcome]:
    """Run ``n_trials`` independent trials of the same sequence.

    Results are identical for any ``jobs``: each trial's randomness is
    seeded by its index, and outcomes are returned in trial order.
    """
    if n_trials < 1:
        raise InvalidInputError("need at least one trial")
    store_traces = store_traces and simulate_cooling
    trials = list(range(n_trials))
    if jobs <= 1 or n_trials == 1:
        return _run_chunk(spec, setup, trials, simulate_cooling, store_traces)
    jobs = min(jobs, n_trials)
    chunks = [trials[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(
            pool.map(
                _run_chunk,
                [spec] * jobs,
                [setup] * jobs,
                chunks,
                [simulate_cooling] * jobs,
                [store_traces] * jobs,
            )
        )
    outcomes = [o for part in parts for o in part]
    outcomes.sort(key=lambda o: o.trial)
    return outcomes


@dataclass(frozen=True)
class SuccessRecord:
    """Run lengths of consecutive successful transports.

    ``successes[i]`` counts transports before run ``i`` ended; ``losses[i]``
    says whether it ended in an observed loss (False = censored, the
    experiment simply stopped).
    """

    successes: tuple[int, ...]
    losses: tuple[bool, ...]
    background_loss: float = 0.0

    def __post_init__(self) -> None:
        if len(self.successes) != len(self.losses) or not self.successes:
            raise InvalidInputError("successes and losses must be matching, non-empty")
        if any(n < 0 for n in self.successes):
            raise InvalidInputError("run lengths cannot be negative")
        if not 0 <= self.background_loss < 1:
            raise InvalidInputError("background_loss must be in [0, 1)")


@dataclass(frozen=True)
class SuccessEstimate:
    """Per-attempt success probability from run-length statistics.

    ``p_observed`` is the raw per-attempt probability (geometric MLE with
    censoring); ``p_net`` removes the stated energy-independent background
    so it reflects transport alone.  The confidence interval is a 68
    percent profile-likelihood interval mapped through the same background
    correction.  ``degenerate`` flags records with no successes at all,
    where the interval is one-sided and the point estimate is a boundary.
    """

    p_observed: float
    p_net: float
    ci_low: float
    ci_high: float
    degenerate: bool


def outcomes_to_record(
    outcomes: list[SequenceOutcome], background_loss: float = 0.0
) -> SuccessRecord:
    """Chain per-trial survival into run-length form, censoring the tail."""
    successes: list[int] = []
    losses: list[bool] = []
    run = 0
    for out in outcomes:
        if out.survived:
            run += 1
        else:
            successes.append(run)
            losses.append(True)
            run = 0
    if run > 0 or not successes:
        successes.append(run)
        losses.append(False)
    return SuccessRecord(tuple(successes), tuple(losses), background_loss)


def estimate_success(record: SuccessRecord) -> SuccessEstimate:
    """Maximum-likelihood per-attempt success probability with 68 percent CI.

    Each attempt succeeds independently with probability p, so a run of n
    successes ending in a loss contributes p^n (1-p) and a censored run
    contributes p^n.  The interval is where the profile log-likelihood
    stays within 0.5 of its maximum.
    """
    total = sum(record.successes)
    k = sum(record.losses)
    b = record.background_loss

    if k == 0:
        p_obs = 1.0
        lo = float(np.exp(-0.5 / total)) if total > 0 else 0.0
        hi = 1.0
        degenerate = total == 0
    elif total == 0:
        p_obs = 0.0
        lo = 0.0
        hi = float(1 - np.exp(-0.5 / k))
        degenerate = True
    else:
        p_obs = total / (total + k)
        ln_max = total * np.log(p_obs) + k * np.log(1 - p_obs)

        def excess(p: float) -> float:
            return total * np.log(p) + k * np.log(1 - p) - ln_max + 0.5

        eps = 1e-12
        lo = brentq(excess, eps, p_obs) if excess(eps) < 0 else 0.0
        hi = brentq(excess, p_obs, 1 - eps) if excess(1 - eps) < 0 else 1.0
        degenerate = False

    scale = 1.0 / (1.0 - b)
    p_net = min(p_obs * scale, 1.0)
    return SuccessEstimate(
        p_obs, p_net, min(lo * scale, 1.0), min(hi * scale, 1.0), degenerate
    )


@dataclass(frozen=True)
class TauSweepRow:
    tau: float
    p_net: float
    p_lo: float
    p_hi: float
    e_final_ev: float  # mean over surviving trials
    e_max_ev: float  # mean over trials
    max_excursion: float  # m, mean over trials


@dataclass(frozen=True)
class SigmaSweepRow:
    sigma: float
    e_final_ev: float  # mean over surviving trials
    e_max_ev: float
    max_excursion: float  # m


def _sweep_tau_point(
    spec: SequenceSpec, setup: TrapSetup, tau: float, n_trials: int
) -> TauSweepRow:
    ramp = RampSpec(
        distance=spec.ramp.distance,
        duration=tau * 2 * np.pi / spec.ramp.omega,
        sigma=spec.ramp.sigma,
        dt_update=spec.ramp.dt_update,
        omega=spec.ramp.omega,
    )
    point_spec = replace(spec, ramp=ramp)
    outcomes = run_trials(point_spec, setup, n_trials, store_traces=False)
    est = estimate_success(outcomes_to_record(outcomes, spec.background_loss))
    finals = [o.e_final_ev for o in outcomes if o.survived and np.isfinite(o.e_final_ev)]
    e_final = float(np.mean(finals)) if finals else float("nan")
    return TauSweepRow(
        tau=tau,
        p_net=est.p_net,
        p_lo=est.ci_low,
        p_hi=est.ci_high,
        e_final_ev=e_final,
        e_max_ev=float(np.mean([o.e_max_ev for o in outcomes])),
        max_excursion=float(np.mean([o.max_excursion for o in outcomes])),
    )


def sweep_tau(
    spec: SequenceSpec,
    setup: TrapSetup,
    taus,
    n_trials: int = 10,
    jobs: int = 1,
) -> list[TauSweepRow]:
    """Transport statistics versus the dimensionless round-trip duration."""
    taus = [float(t) for t in taus]
    if not taus:
        raise InvalidInputError("no tau values given")
    if jobs <= 1 or len(taus) == 1:
        return [_sweep_tau_point(spec, setup, t, n_trials) for t in taus]
    with ProcessPoolExecutor(max_workers=min(jobs, len(taus))) as pool:
        rows = list(
            pool.map(
                _sweep_tau_point,
                [spec] * len(taus),
                [setup] * len(taus),
                taus,
                [n_trials] * len(taus),
            )
        )
    return rows


def _sweep_sigma_point(
    spec: SequenceSpec, setup: TrapSetup, sigma: float, n_trials: int
) -> SigmaSweepRow:
    ramp = replace(spec.ramp, sigma=sigma)
    point_spec = replace(spec, ramp=ramp)
    outcomes = run_trials(point_spec, setup, n_trials, store_traces=False)
    finals = [o.e_final_ev for o in outcomes if o.survived and np.isfinite(o.e_final_ev)]
    return SigmaSweepRow(
        sigma=sigma,
        e_final_ev=float(np.mean(finals)) if finals else float("nan"),
        e_max_ev=float(np.mean([o.e_max_ev for o in outcomes])),
        max_excursion=float(np.mean([o.max_excursion for o in outcomes])),
    )


def sweep_sigma(
    spec: SequenceSpec,
    setup: TrapSetup,
    sigmas,
    n_trials: int = 3,
    jobs: int = 1,
) -> list[SigmaSweepRow]:
    """Residual transport energy versus the ramp shape parameter."""
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise InvalidInputError("no sigma values given")
    if jobs <= 1 or len(sigmas) == 1:
        return [_sweep_sigma_point(spec, setup, s, n_trials) for s in sigmas]
    with ProcessPoolExecutor(max_workers=min(jobs, len(sigmas))) as pool:
        rows = list(
            pool.map(
                _sweep_sigma_point,
                [spec] * len(sigmas),
                [setup] * len(sigmas),
                sigmas,
                [n_trials] * len(sigmas),
            )
        )
    return rows


def save_record(record: SuccessRecord, path, meta: str | None = None) -> None:
    """One run length per line; a censored final run is marked in the header."""
    trailing = "true" if (record.losses and not record.losses[-1]) else "false"
    if any(not l for l in record.losses[:-1]):
        raise InvalidInputError(
            "file format only supports censoring of the final run"
        )
    with open(path, "w") as fh:
        fh.write(
            f"# success-record v1 runs={len(record.successes)} "
            f"trailing_censored={trailing} "
            f"background_loss={record.background_loss!r}\n"
        )
        fh.write(meta_line(meta))
        fh.write("n_successes\n")
        for n in record.successes:
            fh.write(f"{n}\n")


_RECORD_HEADER = re.compile(
    r"^# success-record v1 runs=(\d+) trailing_censored=(true|false) "
    r"background_loss=([0-9.eE+-]+)$"
)


def load_record(path) -> SuccessRecord:
    path = str(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty record file", path=path, line=1)
    m = _RECORD_HEADER.match(lines[0])
    if not m:
        raise ParseError(
            "missing or malformed header, expected '# success-record v1 runs=N "
            "trailing_censored=BOOL background_loss=X'",
            path=path,
            line=1,
        )
    trailing = m.group(2) == "true"
    background = float(m.group(3))
    successes = []
    for lineno, line in data_lines(lines):
        try:
            successes.append(int(line))
        except ValueError:
            raise ParseError("non-integer run length", path=path, line=lineno) from None
    if not successes:
        raise ParseError("record has no runs", path=path, line=len(lines))
    losses = [True] * len(successes)
    if trailing:
        losses[-1] = False
    return SuccessRecord(tuple(successes), tuple(losses), background)
