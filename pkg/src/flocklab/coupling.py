"""Coupled-trajectory estimator for the distance between the N-particle flow
and its mean-field approximation.

One trial draws an initial N-sample, evolves it twice from the same points --
once under the mutual N-particle dynamics, once as N independent tracked
characteristics driven by a large fresh reference ensemble -- and records the
coupling energies

    P = 1/2 sum_i |x_i - xbar_i|^2   (positions)
    K = 1/2 sum_i |v_i - vbar_i|^2   (velocities)
    C = 1/2 sum_i |th_i - thbar_i|^2 (preferred speeds; 0 when forceless)

whose trial expectation upper-bounds the squared marginal Wasserstein
distance via sqrt((k/N) * E[2(P+K+C)]).

Seeding: trial i consumes streams 2i (initial sample) and 2i+1 (reference),
derived independently from the master seed, so any trial is reproducible in
isolation and aggregation order cannot change results.  Trials may run on a
thread pool; aggregation folds in trial-index order, making every output
independent of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from . import _pairsum
from .core import (
    ForceParams,
    InitialDistribution,
    KernelSpec,
    ParticleEnsemble,
    derive_seed,
    make_rng,
    sample_initial,
)
from .dynamics import IntegratorConfig, NumericalBlowupError
from .meanfield import joint_rk4_step

__all__ = [
    "CouplingConfig",
    "ChaosMetricsSample",
    "ChaosAggregate",
    "run_coupled_trial",
    "estimate_chaos_energies",
    "chaos_n_sweep",
    "aggregate_samples",
    "marginal_w2_bound",
    "pooled_marginals",
    "sznitman_functional",
    "force_fluctuation",
]

_DEFAULT_OBS_POINTS = 24


def _default_obs_times(t_end: float) -> tuple[float, ...]:
    # 0 plus log-spaced points: the energy growth spans scales
    lo = t_end / 32.0
    grid = np.geomspace(lo, t_end, _DEFAULT_OBS_POINTS)
    return (0.0, *(float(t) for t in grid))


@dataclass(frozen=True)
class CouplingConfig:
    """Monte Carlo configuration for coupled trials.

    ``n_reference`` defaults to max(4096, 16 * n_particles).  ``obs_times``
    defaults to 0 plus 24 log-spaced points up to t_end; times are snapped to
    the integrator step grid when trials run.
    """

    n_particles: int
    trials: int
    kernel: KernelSpec
    init: InitialDistribution
    integrator: IntegratorConfig
    master_seed: int
    n_reference: int | None = None
    force: ForceParams | None = None
    obs_times: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError("n_particles must be a positive integer")
        object.__setattr__(self, "n_particles", int(self.n_particles))
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        object.__setattr__(self, "trials", int(self.trials))
        if self.n_reference is None:
            object.__setattr__(
                self, "n_reference", max(4096, 16 * self.n_particles)
            )
        else:
            object.__setattr__(self, "n_reference", int(self.n_reference))
        if self.n_reference < self.n_particles:
            raise ValueError("n_reference must be at least n_particles")
        if (self.force is not None) != (self.init.theta_range is not None):
            raise ValueError(
                "force parameters require init.theta_range and vice versa"
            )
        object.__setattr__(self, "master_seed", int(self.master_seed))
        if self.obs_times is None:
            times = _default_obs_times(self.integrator.t_end)
        else:
            times = tuple(float(t) for t in self.obs_times)
            if len(times) == 0:
                raise ValueError("obs_times must be nonempty")
            if any(not math.isfinite(t) or t < 0.0 for t in times):
                raise ValueError("obs_times must be finite and non-negative")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("obs_times must be strictly increasing")
            if times[-1] > self.integrator.t_end * (1.0 + 1e-12):
                raise ValueError("obs_times must not exceed t_end")
        object.__setattr__(self, "obs_times", times)


@dataclass(frozen=True)
class ChaosMetricsSample:
    """Coupling energies of one trial at one time; total = 2 (P + K + C)."""

    t: float
    P: float
    K: float
    C: float
    total: float

    def __post_init__(self) -> None:
        for name in ("P", "K", "C", "total"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and non-negative")
        expect = 2.0 * (self.P + self.K + self.C)
        if abs(self.total - expect) > 1e-12 * max(1.0, expect):
            raise ValueError("total inconsistent with 2(P+K+C)")


@dataclass(frozen=True)
class ChaosAggregate:
    """Trial means of the coupling energies on the observation grid."""

    times: np.ndarray
    P_mean: np.ndarray
    K_mean: np.ndarray
    C_mean: np.ndarray
    total_mean: np.ndarray
    total_stderr: np.ndarray
    trials: int
    n_particles: int
    failed_trials: int = 0
    failed_indices: tuple[int, ...] = ()

    @property
    def partial(self) -> bool:
        return self.failed_trials > 0

    def to_csv(self, out: TextIO, header_meta: dict | None = None) -> None:
        """Fixed column order, 17 significant digits (bit-exact round trips)."""
        if header_meta:
            for key in sorted(header_meta):
                out.write(f"# {key}={header_meta[key]}\n")
        out.write("t,P_mean,K_mean,C_mean,total_mean,total_stderr,trials\n")
        for i in range(self.times.shape[0]):
            out.write(
                f"{self.times[i]:.17g},{self.P_mean[i]:.17g},{self.K_mean[i]:.17g},"
                f"{self.C_mean[i]:.17g},{self.total_mean[i]:.17g},"
                f"{self.total_stderr[i]:.17g},{self.trials}\n"
            )


def _obs_steps(cfg: CouplingConfig) -> list[tuple[int, float]]:
    dt = cfg.integrator.dt
    steps = sorted({int(round(t / dt)) for t in cfg.obs_times})
    return [(k, k * dt) for k in steps]


def _trial_initial_states(
    cfg: CouplingConfig, n_values: Sequence[int], trial_index: int
) -> tuple[dict[str, ParticleEnsemble], dict[str, str | None]]:
    seed_sample = derive_seed(cfg.master_seed, 2 * trial_index)
    seed_reference = derive_seed(cfg.master_seed, 2 * trial_index + 1)
    sample0 = sample_initial(cfg.init, max(n_values), seed_sample)
    reference0 = sample_initial(cfg.init, cfg.n_reference, seed_reference)
    states = {"reference": reference0, "tracked": sample0}
    drivers: dict[str, str | None] = {"reference": None, "tracked": "reference"}
    for nv in n_values:
        states[f"discrete{nv}"] = sample0.subset(nv)
        drivers[f"discrete{nv}"] = None
    return states, drivers


def _energies(
    discrete: ParticleEnsemble, tracked: ParticleEnsemble, t: float
) -> ChaosMetricsSample:
    n = discrete.count
    dx = discrete.positions - tracked.positions[:n]
    dv = discrete.velocities - tracked.velocities[:n]
    p = 0.5 * float(np.sum(dx * dx))
    k = 0.5 * float(np.sum(dv * dv))
    c = 0.0
    if discrete.has_thetas:
        dth = discrete.thetas - tracked.thetas[:n]
        c = 0.5 * float(np.sum(dth * dth))
    return ChaosMetricsSample(t, p, k, c, 2.0 * (p + k + c))


def _phase_point(ens: ParticleEnsemble, i: int) -> np.ndarray:
    parts = [ens.positions[i], ens.velocities[i]]
    if ens.has_thetas:
        parts.append(ens.thetas[i : i + 1])
    return np.concatenate(parts)


def _run_trial(
    cfg: CouplingConfig,
    n_values: Sequence[int],
    trial_index: int,
    collect_marginals: bool = False,
) -> tuple[dict[int, list[ChaosMetricsSample]], dict[float, tuple[np.ndarray, np.ndarray]]]:
    states, drivers = _trial_initial_states(cfg, n_values, trial_index)
    obs = _obs_steps(cfg)
    obs_map = dict(obs)
    n_steps = obs[-1][0]
    dt = cfg.integrator.dt
    samples: dict[int, list[ChaosMetricsSample]] = {nv: [] for nv in n_values}
    marginals: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    n_main = cfg.n_particles

    def record(step: int) -> None:
        t = obs_map[step]
        tracked = states["tracked"]
        for nv in n_values:
            samples[nv].append(_energies(states[f"discrete{nv}"], tracked, t))
        if collect_marginals:
            marginals[t] = (
                _phase_point(states[f"discrete{n_main}"], 0),
                _phase_point(tracked, 0),
            )

    if 0 in obs_map:
        record(0)
    for k in range(1, n_steps + 1):
        states = joint_rk4_step(states, drivers, cfg.kernel, cfg.force, dt)
        if k in obs_map:
            record(k)
    return samples, marginals


def run_coupled_trial(cfg: CouplingConfig, trial_index: int) -> list[ChaosMetricsSample]:
    """One coupled trial; returns energy samples on the observation grid.

    Deterministic in (cfg, trial_index): the trial draws its own seed streams
    from the master seed, so trials can run in any order or in isolation.
    """
    if trial_index < 0:
        raise ValueError("trial_index must be non-negative")
    samples, _ = _run_trial(cfg, [cfg.n_particles], trial_index)
    return samples[cfg.n_particles]


def aggregate_samples(
    per_trial: Sequence[Sequence[ChaosMetricsSample]],
    n_particles: int,
    failed_indices: Sequence[int] = (),
) -> ChaosAggregate:
    """Fold per-trial sample lists (identical time grids) into means.

    The standard error of the total uses the ddof=1 sample variance over
    trials; a single trial yields stderr 0.
    """
    if len(per_trial) == 0:
        raise ValueError("no surviving trials to aggregate")
    times = np.array([s.t for s in per_trial[0]])
    for trial in per_trial:
        if len(trial) != times.shape[0] or any(
            s.t != t for s, t in zip(trial, times)
        ):
            raise ValueError("trials disagree on the observation grid")
    n = len(per_trial)
    p = np.array([[s.P for s in trial] for trial in per_trial])
    k = np.array([[s.K for s in trial] for trial in per_trial])
    c = np.array([[s.C for s in trial] for trial in per_trial])
    tot = np.array([[s.total for s in trial] for trial in per_trial])
    stderr = (
        np.zeros(times.shape[0])
        if n == 1
        else np.std(tot, axis=0, ddof=1) / math.sqrt(n)
    )
    return ChaosAggregate(
        times=times,
        P_mean=p.mean(axis=0),
        K_mean=k.mean(axis=0),
        C_mean=c.mean(axis=0),
        total_mean=tot.mean(axis=0),
        total_stderr=stderr,
        trials=n,
        n_particles=int(n_particles),
        failed_trials=len(failed_indices),
        failed_indices=tuple(int(i) for i in failed_indices),
    )


def _map_trials(
    cfg: CouplingConfig,
    worker: Callable[[int], object],
    threads: int,
) -> tuple[list[object], list[int]]:
    """Run worker(trial_index) for every trial; results in trial order.

    Trials that abort with numerical blowup are dropped and their indices
    reported, so aggregates can be marked partial.
    """
    results: list[object] = []
    failed: list[int] = []

    def consume(idx: int, getter: Callable[[], object]) -> None:
        try:
            results.append(getter())
        except NumericalBlowupError:
            failed.append(idx)

    if threads <= 1:
        for i in range(cfg.trials):
            consume(i, lambda i=i: worker(i))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(worker, i) for i in range(cfg.trials)]
            for i, fut in enumerate(futures):
                consume(i, fut.result)
    return results, failed


def estimate_chaos_energies(cfg: CouplingConfig, threads: int = 1) -> ChaosAggregate:
    """Average the coupling energies over cfg.trials independent trials.

    Deterministic for a given master seed regardless of ``threads``; trials
    lost to numerical blowup leave a partial aggregate (failed_trials > 0).
    """
    if cfg.trials < 2:
        raise ValueError("need at least 2 trials for standard errors")
    per_trial, failed = _map_trials(
        cfg, lambda i: run_coupled_trial(cfg, i), threads
    )
    if not per_trial:
        raise NumericalBlowupError(cfg.integrator.t_end, "all trials failed")
    return aggregate_samples(per_trial, cfg.n_particles, failed)


def chaos_n_sweep(
    cfg: CouplingConfig, n_values: Sequence[int], threads: int = 1
) -> dict[int, ChaosAggregate]:
    """Aggregates for several ensemble sizes sharing each trial's sample and
    reference.

    cfg.n_particles must equal max(n_values).  Within a trial the discrete
    systems of each size start from nested prefixes of one initial sample and
    the tracked characteristics are shared (they are independent per-point
    flows, so the size-N tracked set is exactly the first N points).  Sharing
    the reference across sizes removes common Monte Carlo noise from
    size-to-size comparisons.
    """
    sizes = sorted({int(nv) for nv in n_values})
    if not sizes or sizes[0] < 1:
        raise ValueError("n_values must be positive integers")
    if sizes[-1] != cfg.n_particles:
        raise ValueError("max(n_values) must equal cfg.n_particles")
    if cfg.trials < 2:
        raise ValueError("need at least 2 trials for standard errors")
    per_trial, failed = _map_trials(
        cfg, lambda i: _run_trial(cfg, sizes, i)[0], threads
    )
    if not per_trial:
        raise NumericalBlowupError(cfg.integrator.t_end, "all trials failed")
    return {
        nv: aggregate_samples([trial[nv] for trial in per_trial], nv, failed)
        for nv in sizes
    }


def marginal_w2_bound(agg: ChaosAggregate, k: int, n_particles: int) -> np.ndarray:
    """Per-time upper bound sqrt((k/N) * mean_total) on the k-marginal W2.

    Scales exactly as sqrt(k); requires 1 <= k <= N and an aggregate computed
    with n_particles = N.
    """
    if not (1 <= k <= n_particles):
        raise ValueError("k must satisfy 1 <= k <= n_particles")
    if n_particles != agg.n_particles:
        raise ValueError("aggregate was computed for a different n_particles")
    return np.sqrt((k / n_particles) * agg.total_mean)


def pooled_marginals(
    cfg: CouplingConfig, threads: int = 1
) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """Per observation time, pooled single-particle phase points.

    Returns {t: (discrete_points, tracked_points)}, one row per surviving
    trial, each row the phase vector (x, v[, theta]) of particle 0.  Rows are
    i.i.d. across trials, giving equal-size empirical measures of the discrete
    1-marginal and its mean-field counterpart for the exact-W2 cross-check.
    """
    per_trial, _failed = _map_trials(
        cfg, lambda i: _run_trial(cfg, [cfg.n_particles], i, collect_marginals=True)[1],
        threads,
    )
    if not per_trial:
        raise NumericalBlowupError(cfg.integrator.t_end, "all trials failed")
    out: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for t in per_trial[0]:
        disc = np.stack([trial[t][0] for trial in per_trial])
        trac = np.stack([trial[t][1] for trial in per_trial])
        out[t] = (disc, trac)
    return out


def sznitman_functional(
    cfg: CouplingConfig,
    test_fn: Callable[[ParticleEnsemble], np.ndarray],
    t: float,
) -> float:
    """Monte Carlo estimate of E | mean_N test_fn - <f_t, test_fn> |^2.

    The mean-field average <f_t, .> is approximated by the reference-ensemble
    average with a fresh reference per trial, adding O(1/M) to the estimate.
    ``test_fn`` maps an ensemble to one value per particle.
    """
    if not (0.0 <= t <= cfg.integrator.t_end * (1.0 + 1e-12)):
        raise ValueError("t must lie within the integration horizon")
    dt = cfg.integrator.dt
    n_steps = int(round(t / dt))

    def one_trial(trial_index: int) -> float:
        states, drivers = _trial_initial_states(cfg, [cfg.n_particles], trial_index)
        del states["tracked"], drivers["tracked"]
        for _ in range(n_steps):
            states = joint_rk4_step(states, drivers, cfg.kernel, cfg.force, dt)
        disc = np.asarray(test_fn(states[f"discrete{cfg.n_particles}"]), dtype=np.float64)
        ref = np.asarray(test_fn(states["reference"]), dtype=np.float64)
        if disc.shape != (cfg.n_particles,) or ref.shape != (cfg.n_reference,):
            raise ValueError("test_fn must return one value per particle")
        return (float(disc.mean()) - float(ref.mean())) ** 2

    vals, _failed = _map_trials(cfg, one_trial, threads=1)
    if not vals:
        raise NumericalBlowupError(t, "all trials failed")
    return float(np.mean(vals))


def force_fluctuation(
    reference: ParticleEnsemble,
    probe_position,
    probe_velocity,
    kernel: KernelSpec,
    subsample_size: int,
    resamples: int,
    seed: int = 0,
) -> float:
    """Variance of the N-subsampled alignment force against the full average.

    Estimates E | (1/N) sum_j phi(|x - x_j|)(v_j - v) - full-M average |^2 by
    drawing ``resamples`` subsets of the reference without replacement.  With
    subsample_size = M the subset is the whole ensemble and the estimate is
    exactly 0.  Expected to scale like 1/N (and to be bounded by
    (4/N) sup|phi dv|^2).
    """
    if resamples < 2:
        raise ValueError("need at least 2 resamples")
    m = reference.count
    if not (1 <= subsample_size <= m):
        raise ValueError("subsample_size must lie in [1, reference.count]")
    x = np.asarray(probe_position, dtype=np.float64).reshape(1, -1)
    v = np.asarray(probe_velocity, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != reference.dim or v.shape[1] != reference.dim:
        raise ValueError("probe dimension mismatch")
    full = _pairsum.alignment_cross(
        x, v, reference.positions, reference.velocities, kernel
    )
    rng = make_rng(seed)
    acc = 0.0
    for _ in range(int(resamples)):
        idx = np.sort(rng.choice(m, size=subsample_size, replace=False))
        xs = np.ascontiguousarray(reference.positions[idx])
        vs = np.ascontiguousarray(reference.velocities[idx])
        sub = _pairsum.alignment_cross(x, v, xs, vs, kernel)
        d = sub - full
        acc += float(np.sum(d * d))
    return acc / resamples
