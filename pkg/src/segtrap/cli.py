"""Command-line front end.

Each subcommand loads one TOML config (``--config``, else the path in the
SEGTRAP_CONFIG environment variable, else built-in defaults), runs one
reproducible computation, and writes plot-ready CSV tables.  Every output
file carries the config hash in a ``#`` header line, and every file-writing
run also emits a JSON manifest describing exactly what was produced, so a
run can be checked or re-created byte for byte.  Nothing here depends on
wall-clock time.

Exit codes: 0 success, 1 internal error, 2 bad input (flags, files,
config), 3 infeasible physics (no well, unreachable synthesis target).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from dataclasses import replace

import numpy as np

from . import __version__
from .config import (
    Config,
    build_basis,
    build_dac,
    build_heating,
    build_laser,
    build_load_voltages,
    build_ramp,
    build_sequence_spec,
    build_setup,
    build_solver,
    build_species,
    config_hash,
    load_config,
)
from .constants import elementary_charge
from .cooling import estimate_energy, load_trace
from .dynamics import Trajectory, integrate_full, integrate_harmonic
from .errors import (
    ConfigError,
    EstimationError,
    FitError,
    InfeasibleError,
    InvalidInputError,
    NoWellError,
    ParseError,
    SegtrapError,
)
from .experiment import (
    outcomes_to_record,
    run_trials,
    save_record,
    sweep_sigma,
    sweep_tau,
)
from .micromotion import fit_sine, find_optimum, flatness_chi2, load_histogram, load_scan
from .trap_model import (
    characterize_radial,
    characterize_well,
    ion_crystal_positions,
    superpose,
)
from .waveform import generate_waveform, load_waveform, save_waveform

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


def parse_values(text: str) -> list[float]:
    """Parse ``4..20``, ``2.5..4:0.5``, ``4,6,8``, or any comma mix of these.

    A range is inclusive of both ends; its default step is 1.
    """
    values: list[float] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            raise InvalidInputError(f"empty value in {text!r}")
        if ".." in token:
            span, _, step_s = token.partition(":")
            start_s, _, stop_s = span.partition("..")
            try:
                start, stop = float(start_s), float(stop_s)
                step = float(step_s) if step_s else 1.0
            except ValueError:
                raise InvalidInputError(f"bad range {token!r}") from None
            if step <= 0 or stop < start:
                raise InvalidInputError(f"bad range {token!r}")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            values.extend(start + step * k for k in range(n))
        else:
            try:
                values.append(float(token))
            except ValueError:
                raise InvalidInputError(f"bad value {token!r}") from None
    return values


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return "nan"
    if isinstance(value, str):
        return value
    return repr(float(value))


def _write_table(path, kind, cfg_hash, seed, columns, rows, extra_meta=()):
    lines = [f"# segtrap-table v1 kind={kind}"]
    lines.append(f"# config={cfg_hash} seed={'none' if seed is None else seed}")
    lines.extend(f"# {m}" for m in extra_meta)
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(primary_out, command, args_used, cfg_hash, seed, outputs):
    manifest = {
        "artifact": "segtrap",
        "version": __version__,
        "command": [command] + list(args_used),
        "config": cfg_hash,
        "seed": seed,
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in outputs],
    }
    path = str(primary_out) + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _announce(args, paths):
    for p in paths:
        print(f"wrote {p}")


# --- subcommands -----------------------------------------------------------


def cmd_characterize(args, cfg: Config) -> int:
    species = build_species(cfg)
    drive = cfg.drive
    radial = characterize_radial(
        species,
        drive_frequency=2 * np.pi * drive.freq_mhz * 1e6,
        v_pp=drive.v_pp,
        kappa=drive.kappa,
        r0=cfg.geometry.radial_r0_mm * 1e-3,
    )
    rows = [
        ("mathieu_q", radial.mathieu_q),
        ("omega_rad_khz", radial.omega_radial / (2 * np.pi * 1e3)),
        ("radial_depth_ev", radial.depth_ev),
    ]

    basis = build_basis(cfg)
    potential = superpose(
        basis, build_load_voltages(cfg), stray_field=cfg.geometry.stray_field_v_per_m
    )
    try:
        well = characterize_well(potential, species)
    except NoWellError:
        rows.append(("axial_well", "none"))
    else:
        rows.append(("axial_freq_khz", well.omega / (2 * np.pi * 1e3)))
        rows.append(("axial_position_mm", well.z_min * 1e3))
        rows.append(("axial_depth_ev", well.depth_ev))
        two = ion_crystal_positions(species, well.omega, 2)
        three = ion_crystal_positions(species, well.omega, 3)
        rows.append(("crystal_spacing_n2_um", (two[1] - two[0]) * 1e6))
        rows.append(("crystal_spacing_n3_um", (three[1] - three[0]) * 1e6))

    h = config_hash(cfg)
    _write_table(args.out, "characterize", h, None, ["quantity", "value"], rows)
    if args.out:
        manifest = _write_manifest(args.out, "characterize", [args.out], h, None, [args.out])
        _announce(args, [args.out, manifest])
    return EXIT_OK


def _build_transport_waveform(cfg: Config, tau, sigma):
    """Synthesize the transport waveform the config describes."""
    basis = build_basis(cfg)
    species = build_species(cfg)
    ramp = build_ramp(cfg)
    if tau is not None:
        ramp = replace(ramp, duration=tau * 2 * np.pi / ramp.omega)
    if sigma is not None:
        ramp = replace(ramp, sigma=sigma)
    potential = superpose(basis, build_load_voltages(cfg))
    origin = characterize_well(potential, species).z_min
    wf = generate_waveform(
        basis, ramp, species, origin, build_solver(cfg), dac=build_dac(cfg)
    )
    return basis, species, ramp, origin, wf


def cmd_waveform(args, cfg: Config) -> int:
    _, _, ramp, origin, wf = _build_transport_waveform(cfg, args.tau, args.sigma)
    h = config_hash(cfg)
    meta = (
        f"config={h} origin_mm={origin * 1e3!r} tau={ramp.tau!r} sigma={ramp.sigma!r}"
    )
    save_waveform(wf, args.out, meta=meta)
    manifest = _write_manifest(args.out, "waveform", [args.out], h, None, [args.out])
    _announce(args, [args.out, manifest])
    return EXIT_OK


def _trajectory_rows(traj: Trajectory):
    for k in range(traj.t.size):
        yield (
            traj.t[k] * 1e6,
            traj.z[k] * 1e6,
            traj.v[k],
            traj.energy[k] / elementary_charge * 1e3,
            traj.z_well[k] * 1e6,
        )


def cmd_transport(args, cfg: Config) -> int:
    h = config_hash(cfg)
    if args.model == "harmonic":
        ramp = build_ramp(cfg)
        if args.tau is not None:
            ramp = replace(ramp, duration=args.tau * 2 * np.pi / ramp.omega)
        if args.sigma is not None:
            ramp = replace(ramp, sigma=args.sigma)
        traj = integrate_harmonic(ramp, build_species(cfg))
    elif args.waveform:
        basis = build_basis(cfg)
        species = build_species(cfg)
        wf = load_waveform(args.waveform)
        start = characterize_well(superpose(basis, wf.voltages[0]), species).z_min
        traj = integrate_full(basis, wf, species, initial=(start, 0.0))
    else:
        basis, species, _, origin, wf = _build_transport_waveform(
            cfg, args.tau, args.sigma
        )
        traj = integrate_full(basis, wf, species, initial=(origin, 0.0))

    extra = [
        f"e_final_mev={traj.e_final_ev * 1e3!r} e_max_mev={traj.e_max_ev * 1e3!r}",
        f"excursion_um={traj.max_excursion * 1e6!r} "
        f"lost={'true' if traj.lost else 'false'}",
    ]
    cols = ["t_us", "z_um", "v_m_per_s", "energy_mev", "z_well_um"]
    _write_table(args.out, "transport", h, None, cols, _trajectory_rows(traj), extra)
    if args.out:
        used = [x for x in ["--waveform", args.waveform] if args.waveform] + [args.out]
        manifest = _write_manifest(args.out, "transport", used, h, None, [args.out])
        _announce(args, [args.out, manifest])
    return EXIT_OK


def _sequence_inputs(args, cfg: Config):
    spec = build_sequence_spec(cfg)
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, seed=args.seed)
    trials = args.trials if args.trials is not None else cfg.sequence.trials
    return spec, build_setup(cfg), trials


def cmd_sweep_tau(args, cfg: Config) -> int:
    taus = parse_values(args.tau)
    spec, setup, trials = _sequence_inputs(args, cfg)
    rows = sweep_tau(spec, setup, taus, n_trials=trials, jobs=args.jobs)
    h = config_hash(cfg)
    table = [
        (
            r.tau,
            r.p_net,
            r.p_lo,
            r.p_hi,
            r.e_final_ev * 1e3,
            r.e_max_ev * 1e3,
            r.max_excursion * 1e6,
        )
        for r in rows
    ]
    cols = ["tau", "p_net", "p_lo", "p_hi", "e_final_meV", "e_max_meV", "excursion_um"]
    extra = [f"trials={trials}"]
    _write_table(args.out, "sweep-tau", h, spec.seed, cols, table, extra)
    if args.out:
        manifest = _write_manifest(
            args.out, "sweep-tau", ["--tau", args.tau, args.out], h, spec.seed, [args.out]
        )
        _announce(args, [args.out, manifest])
    return EXIT_OK


def cmd_sweep_sigma(args, cfg: Config) -> int:
    sigmas = parse_values(args.sigma)
    spec, setup, trials = _sequence_inputs(args, cfg)
    if args.tau is not None:
        ramp = replace(spec.ramp, duration=args.tau * 2 * np.pi / spec.ramp.omega)
        spec = replace(spec, ramp=ramp)
    rows = sweep_sigma(spec, setup, sigmas, n_trials=trials, jobs=args.jobs)
    h = config_hash(cfg)
    table = [
        (r.sigma, r.e_final_ev * 1e3, r.e_max_ev * 1e3, r.max_excursion * 1e6)
        for r in rows
    ]
    cols = ["sigma", "e_final_meV", "e_max_meV", "excursion_um"]
    extra = [f"trials={trials} tau={spec.ramp.tau!r}"]
    _write_table(args.out, "sweep-sigma", h, spec.seed, cols, table, extra)
    if args.out:
        manifest = _write_manifest(
            args.out,
            "sweep-sigma",
            ["--sigma", args.sigma, args.out],
            h,
            spec.seed,
            [args.out],
        )
        _announce(args, [args.out, manifest])
    return EXIT_OK


def cmd_fit_micromotion(args, cfg: Config) -> int:
    h = config_hash(cfg)
    if (args.histogram is None) == (args.scan is None):
        raise InvalidInputError("give exactly one of --histogram or --scan")
    if args.histogram:
        hist = load_histogram(args.histogram)
        fit = fit_sine(hist)
        chi2, dof, p = flatness_chi2(hist)
        rows = [
            ("amplitude", fit.amplitude),
            ("amplitude_sigma", fit.amplitude_sigma),
            ("phase_rad", fit.phase),
            ("offset_counts", fit.offset),
            ("flatness_chi2", chi2),
            ("flatness_dof", dof),
            ("flatness_p", p),
        ]
        kind = "fit-histogram"
        used = ["--histogram", args.histogram]
    else:
        scan = load_scan(args.scan)
        result = find_optimum(scan)
        rows = [
            ("v_opt", result.v_opt),
            ("v_sigma", result.v_sigma),
            ("slope_per_v", result.slope),
            ("intercept", result.intercept),
            ("extrapolated", result.extrapolated),
        ]
        kind = "fit-scan"
        used = ["--scan", args.scan]
    _write_table(args.out, kind, h, None, ["quantity", "value"], rows)
    if args.out:
        manifest = _write_manifest(args.out, "fit-micromotion", used + [args.out], h, None, [args.out])
        _announce(args, [args.out, manifest])
    return EXIT_OK


def cmd_recover_energy(args, cfg: Config) -> int:
    trace = load_trace(args.trace)
    species = build_species(cfg)
    laser = build_laser(cfg)
    basis = build_basis(cfg)
    well = characterize_well(superpose(basis, build_load_voltages(cfg)), species)
    estimate = estimate_energy(trace, laser, well.omega, species)
    rows = [
        ("e0_mev", estimate.e0_ev * 1e3),
        ("sigma_mev", estimate.sigma_ev * 1e3),
        ("relative_sigma", estimate.relative_sigma),
        ("t_recover_ms", estimate.t_recover * 1e3),
    ]
    rows += [
        (f"sigma_{name}_mev", value * 1e3)
        for name, value in sorted(estimate.components_ev.items())
    ]
    h = config_hash(cfg)
    _write_table(args.out, "recover-energy", h, None, ["quantity", "value"], rows)
    if args.out:
        manifest = _write_manifest(
            args.out, "recover-energy", ["--trace", args.trace, args.out], h, None, [args.out]
        )
        _announce(args, [args.out, manifest])
    return EXIT_OK


def cmd_run(args, cfg: Config) -> int:
    """Run the full shuttle sequence and write the per-trial outcome table."""
    spec, setup, trials = _sequence_inputs(args, cfg)
    outcomes = run_trials(spec, setup, trials, jobs=args.jobs, simulate_cooling=True)
    record = outcomes_to_record(outcomes, spec.background_loss)
    h = config_hash(cfg)
    cols = [
        "trial",
        "survived",
        "escaped",
        "exceeded_threshold",
        "background_lost",
        "e_transport_meV",
        "e_final_meV",
        "e_max_meV",
        "excursion_um",
        "t_recover_ms",
    ]
    table = [
        (
            o.trial,
            o.survived,
            o.escaped,
            o.exceeded_threshold,
            o.background_lost,
            o.e_transport_ev * 1e3,
            o.e_final_ev * 1e3,
            o.e_max_ev * 1e3,
            o.max_excursion * 1e6,
            None if o.t_recover is None else o.t_recover * 1e3,
        )
        for o in outcomes
    ]
    _write_table(args.out, "run", h, spec.seed, cols, table)
    outputs = []
    if args.out:
        outputs.append(args.out)
    if args.record:
        save_record(record, args.record, meta=f"config={h} seed={spec.seed}")
        outputs.append(args.record)
    if outputs:
        manifest = _write_manifest(outputs[0], "run", outputs, h, spec.seed, outputs)
        _announce(args, outputs + [manifest])
    return EXIT_OK


# --- parser and dispatch ---------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segtrap",
        description="Simulation and waveform toolkit for segmented-trap ion transport.",
    )
    parser.add_argument("--version", action="version", version=f"segtrap {__version__}")
    sub = parser.add_subparsers(dest="cmd", metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config path (default: $SEGTRAP_CONFIG)")
        p.set_defaults(func=func)
        return p

    p = add("characterize", cmd_characterize, "trap frequencies, depths, crystal spacings")
    p.add_argument("--out", help="write the report table here instead of stdout")

    p = add("waveform", cmd_waveform, "synthesize a transport voltage waveform")
    p.add_argument("--out", required=True, help="waveform table output path")
    p.add_argument("--tau", type=float, help="override round-trip duration in periods")
    p.add_argument("--sigma", type=float, help="override ramp shape parameter")

    p = add("transport", cmd_transport, "integrate one transport and dump the trajectory")
    p.add_argument("--out", help="trajectory table output path (default stdout)")
    p.add_argument("--waveform", help="replay an existing waveform file")
    p.add_argument("--model", choices=["full", "harmonic"], default="full")
    p.add_argument("--tau", type=float, help="override round-trip duration in periods")
    p.add_argument("--sigma", type=float, help="override ramp shape parameter")

    p = add("sweep-tau", cmd_sweep_tau, "success and excitation versus transport time")
    p.add_argument("--tau", required=True, help="values:  4..20  |  4..20:2  |  4,6,8")
    p.add_argument("--out", help="sweep table output path (default stdout)")
    p.add_argument("--trials", type=int, help="trials per point (default from config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = add("sweep-sigma", cmd_sweep_sigma, "excitation versus ramp shape")
    p.add_argument("--sigma", required=True, help="values: 1..4:0.5 | 1.5,2,2.5")
    p.add_argument("--tau", type=float, help="fix the round-trip duration in periods")
    p.add_argument("--out", help="sweep table output path (default stdout)")
    p.add_argument("--trials", type=int, help="trials per point (default from config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = add("run", cmd_run, "run the full shuttle sequence for N trials")
    p.add_argument("--out", help="per-trial outcome table (default stdout)")
    p.add_argument("--record", help="also write the success-record file here")
    p.add_argument("--trials", type=int, help="number of trials (default from config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = add("fit-micromotion", cmd_fit_micromotion, "fit phase histograms or scans")
    p.add_argument("--histogram", help="phase-histogram file to fit")
    p.add_argument("--scan", help="amplitude-vs-voltage scan file to fit")
    p.add_argument("--out", help="fit report output path (default stdout)")

    p = add("recover-energy", cmd_recover_energy, "invert a fluorescence recovery trace")
    p.add_argument("--trace", required=True, help="fluorescence trace file")
    p.add_argument("--out", help="estimate report output path (default stdout)")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return EXIT_INPUT
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, ParseError, InvalidInputError, FitError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleError, NoWellError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SegtrapError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
