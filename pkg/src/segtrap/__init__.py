"""segtrap: transport simulation and waveform synthesis for a segmented linear ion trap.

The package models one apparatus end to end: per-electrode axial potentials
and their superposition (``trap_model``), voltage-waveform synthesis for
moving a potential well with DAC realism (``waveform``), classical ion
dynamics through rigid or fully resolved potentials (``dynamics``), Doppler
recooling and energy estimation from fluorescence (``cooling``),
micromotion-compensation analysis (``micromotion``), and full shuttle
experiments with survival statistics (``experiment``).  The ``segtrap``
command line binds it all into reproducible table-producing runs.
"""

from .config import (
    Config,
    build_basis,
    build_heating,
    build_laser,
    build_ramp,
    build_sequence_spec,
    build_setup,
    config_hash,
    load_config,
    parse_config,
)
from .constants import CA40, IonSpecies
from .cooling import (
    EnergyEstimate,
    FluorescenceTrace,
    HeatingModel,
    LaserParams,
    apply_heating,
    doppler_limit_energy,
    estimate_energy,
    recovery_time,
    simulate_recovery,
    steady_state,
)
from .dynamics import (
    Trajectory,
    TransportResult,
    classify_loss,
    fourier_transport_energy,
    integrate_full,
    integrate_harmonic,
)
from .errors import (
    ConfigError,
    EstimationError,
    FitError,
    InfeasibleError,
    IntegrationError,
    InvalidInputError,
    NoWellError,
    ParseError,
    SegtrapError,
)
from .experiment import (
    SequenceOutcome,
    SequenceSpec,
    SuccessEstimate,
    SuccessRecord,
    TrapSetup,
    estimate_success,
    run_sequence,
    run_trials,
    sweep_sigma,
    sweep_tau,
)
from .micromotion import (
    CompensationResult,
    MicromotionScan,
    PhaseHistogram,
    SineFit,
    find_optimum,
    fit_sine,
    flatness_chi2,
    simulate_histogram,
)
from .trap_model import (
    AxialBasis,
    AxialPotential,
    RadialCharacterization,
    TrapGeometry,
    WellCharacterization,
    characterize_radial,
    characterize_well,
    compute_basis,
    default_grid,
    ion_crystal_positions,
    superpose,
)
from .waveform import (
    DacSpec,
    RampSpec,
    SolverConfig,
    VoltageWaveform,
    generate_waveform,
    hold,
    lowpass,
    morph,
    quantize,
    solve_voltages,
    time_reverse,
)

__version__ = "1.0.0"

__all__ = [
    "__version__",
    "CA40",
    "IonSpecies",
    "AxialBasis",
    "AxialPotential",
    "TrapGeometry",
    "WellCharacterization",
    "RadialCharacterization",
    "compute_basis",
    "default_grid",
    "superpose",
    "characterize_well",
    "characterize_radial",
    "ion_crystal_positions",
    "RampSpec",
    "SolverConfig",
    "DacSpec",
    "VoltageWaveform",
    "solve_voltages",
    "generate_waveform",
    "morph",
    "hold",
    "quantize",
    "lowpass",
    "time_reverse",
    "Trajectory",
    "TransportResult",
    "integrate_harmonic",
    "integrate_full",
    "fourier_transport_energy",
    "classify_loss",
    "LaserParams",
    "HeatingModel",
    "FluorescenceTrace",
    "EnergyEstimate",
    "doppler_limit_energy",
    "steady_state",
    "recovery_time",
    "simulate_recovery",
    "estimate_energy",
    "apply_heating",
    "PhaseHistogram",
    "MicromotionScan",
    "SineFit",
    "CompensationResult",
    "simulate_histogram",
    "fit_sine",
    "flatness_chi2",
    "find_optimum",
    "TrapSetup",
    "SequenceSpec",
    "SequenceOutcome",
    "SuccessRecord",
    "SuccessEstimate",
    "run_sequence",
    "run_trials",
    "estimate_success",
    "sweep_tau",
    "sweep_sigma",
    "SegtrapError",
    "InvalidInputError",
    "ParseError",
    "NoWellError",
    "InfeasibleError",
    "IntegrationError",
    "EstimationError",
    "FitError",
    "ConfigError",
    "Config",
    "load_config",
    "parse_config",
    "config_hash",
    "build_basis",
    "build_ramp",
    "build_laser",
    "build_heating",
    "build_setup",
    "build_sequence_spec",
]
