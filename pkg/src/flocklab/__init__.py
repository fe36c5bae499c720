"""flocklab: a numerical laboratory for velocity-alignment particle systems.

The package simulates interacting particle ensembles whose velocities relax
toward local averages through a distance-weighted communication kernel,
optionally driven by a speed-regulating force with its own preferred-speed
consensus channel.  On top of the particle integrator it provides mean-field
characteristic flows, coupled-trajectory estimators for the distance between
the N-particle law and its mean-field limit, exact small-instance Wasserstein
oracles, flocking diagnostics, and integrators for the scalar comparison
systems used to bound those distances analytically.
"""

from .core import (
    ForceParams,
    InitialDistribution,
    KernelSpec,
    ParticleEnsemble,
    VelocityBox,
    VelocityCone,
    derive_seed,
    kernel_eval,
    kernel_heavy_tail_check,
    make_rng,
    sample_initial,
    sector_margin,
)
from .dynamics import (
    Derivatives,
    IntegratorConfig,
    NumericalBlowupError,
    cs_rhs,
    csr_rhs,
    integrate,
    rk4_step,
    trajectory_to_csv,
)
from .meanfield import MeanFieldSystem, advance_coupled_system, meanfield_rhs
from .coupling import (
    ChaosAggregate,
    ChaosMetricsSample,
    CouplingConfig,
    chaos_n_sweep,
    estimate_chaos_energies,
    force_fluctuation,
    marginal_w2_bound,
    pooled_marginals,
    run_coupled_trial,
    sznitman_functional,
)
from .transport import w2_bruteforce, w2_exact
from .diagnostics import (
    EnvelopeFit,
    FlockDiagnostics,
    envelope_check,
    fit_decay_rate,
    flock_diagnostics,
    pairwise_max_angle,
    projected_max_angle,
)
from .odi import (
    OdiState,
    OdiTrajectory,
    forced_envelope_constants,
    forceless_envelope_constants,
    integrate_odi_forced,
    integrate_odi_forceless,
)

__version__ = "0.1.0"

__all__ = [
    "ForceParams",
    "InitialDistribution",
    "KernelSpec",
    "ParticleEnsemble",
    "VelocityBox",
    "VelocityCone",
    "derive_seed",
    "kernel_eval",
    "kernel_heavy_tail_check",
    "make_rng",
    "sample_initial",
    "sector_margin",
    "Derivatives",
    "IntegratorConfig",
    "NumericalBlowupError",
    "cs_rhs",
    "csr_rhs",
    "integrate",
    "rk4_step",
    "trajectory_to_csv",
    "MeanFieldSystem",
    "advance_coupled_system",
    "meanfield_rhs",
    "ChaosAggregate",
    "ChaosMetricsSample",
    "CouplingConfig",
    "chaos_n_sweep",
    "estimate_chaos_energies",
    "force_fluctuation",
    "marginal_w2_bound",
    "pooled_marginals",
    "run_coupled_trial",
    "sznitman_functional",
    "w2_bruteforce",
    "w2_exact",
    "EnvelopeFit",
    "FlockDiagnostics",
    "envelope_check",
    "fit_decay_rate",
    "flock_diagnostics",
    "pairwise_max_angle",
    "projected_max_angle",
    "OdiState",
    "OdiTrajectory",
    "forced_envelope_constants",
    "forceless_envelope_constants",
    "integrate_odi_forced",
    "integrate_odi_forceless",
]
