"""Coupled-trial Monte Carlo: exact zeros, sharing, scaling, bookkeeping."""

import io
import math

import numpy as np
import pytest

from flocklab import (
    ChaosAggregate,
    ChaosMetricsSample,
    CouplingConfig,
    InitialDistribution,
    IntegratorConfig,
    KernelSpec,
    VelocityBox,
    chaos_n_sweep,
    estimate_chaos_energies,
    force_fluctuation,
    marginal_w2_bound,
    pooled_marginals,
    run_coupled_trial,
    sample_initial,
    sznitman_functional,
)
from flocklab.coupling import aggregate_samples

POWER = KernelSpec(kind="power", lam=1.0, beta=0.5)
INIT = InitialDistribution(
    position_box=((0.0, 1.0), (0.0, 1.0)),
    velocity_region=VelocityBox(((-1.0, 1.0), (-1.0, 1.0))),
)


def _cfg(n=8, trials=4, t_end=1.0, dt=0.1, n_ref=64, seed=7, obs=None):
    return CouplingConfig(
        n_particles=n,
        trials=trials,
        kernel=POWER,
        init=INIT,
        integrator=IntegratorConfig(dt=dt, t_end=t_end),
        master_seed=seed,
        n_reference=n_ref,
        obs_times=obs,
    )


def test_trial_starts_at_exact_zero():
    # discrete system and tracked characteristics share the initial sample
    samples = run_coupled_trial(_cfg(obs=(0.0, 0.5, 1.0)), trial_index=0)
    first = samples[0]
    assert first.t == 0.0
    assert first.P == 0.0 and first.K == 0.0 and first.C == 0.0
    assert first.total == 0.0


def test_energies_grow_from_zero():
    samples = run_coupled_trial(_cfg(n=6, t_end=2.0, obs=(0.0, 1.0, 2.0)), 1)
    totals = [s.total for s in samples]
    assert totals[0] == 0.0
    assert totals[1] > 0.0
    assert totals[2] > totals[1]


def test_trials_are_reproducible_and_distinct():
    cfg = _cfg(obs=(1.0,))
    a = run_coupled_trial(cfg, 3)
    b = run_coupled_trial(cfg, 3)
    assert [s.total for s in a] == [s.total for s in b]
    c = run_coupled_trial(cfg, 4)
    assert [s.total for s in c] != [s.total for s in a]


def test_estimate_matches_manual_trial_average():
    cfg = _cfg(trials=5, obs=(0.5, 1.0))
    agg = estimate_chaos_energies(cfg)
    per_trial = [run_coupled_trial(cfg, i) for i in range(5)]
    for j in range(2):
        mean = np.mean([trial[j].total for trial in per_trial])
        assert agg.total_mean[j] == mean
    assert agg.trials == 5
    assert not agg.partial


def test_thread_count_does_not_change_results():
    cfg = _cfg(trials=6, obs=(0.5, 1.0))
    a = estimate_chaos_energies(cfg, threads=1)
    b = estimate_chaos_energies(cfg, threads=3)
    assert np.array_equal(a.total_mean, b.total_mean)
    assert np.array_equal(a.total_stderr, b.total_stderr)
    assert np.array_equal(a.P_mean, b.P_mean)


def test_sweep_sizes_do_not_interact():
    # the size-4 aggregate is identical whether or not size 2 rides along
    cfg = _cfg(n=4, trials=3, n_ref=32, obs=(0.5, 1.0))
    both = chaos_n_sweep(cfg, [2, 4])
    alone = chaos_n_sweep(cfg, [4])
    assert np.array_equal(both[4].total_mean, alone[4].total_mean)
    assert np.array_equal(both[4].P_mean, alone[4].P_mean)
    # and matches the single-size estimator path
    est = estimate_chaos_energies(cfg)
    assert np.array_equal(both[4].total_mean, est.total_mean)


def test_sweep_validates_sizes():
    cfg = _cfg(n=4, trials=2)
    with pytest.raises(ValueError):
        chaos_n_sweep(cfg, [2, 8])  # max must equal n_particles
    with pytest.raises(ValueError):
        chaos_n_sweep(cfg, [])


def test_stderr_shrinks_like_root_trials():
    base = dict(n=6, t_end=1.0, dt=0.1, n_ref=48, obs=(1.0,))
    small = estimate_chaos_energies(_cfg(trials=40, **base))
    large = estimate_chaos_energies(_cfg(trials=160, **base))
    ratio = small.total_stderr[0] / large.total_stderr[0]
    # expect about sqrt(160/40) = 2
    assert 1.3 < ratio < 3.0


def test_single_trial_aggregate_has_zero_stderr():
    samples = run_coupled_trial(_cfg(obs=(0.5, 1.0)), 0)
    agg = aggregate_samples([samples], 8)
    assert np.all(agg.total_stderr == 0.0)
    assert agg.trials == 1


def test_aggregate_rejects_mismatched_grids():
    cfg = _cfg(obs=(0.5, 1.0))
    a = run_coupled_trial(cfg, 0)
    b = run_coupled_trial(_cfg(obs=(1.0,)), 1)
    with pytest.raises(ValueError):
        aggregate_samples([a, b], 8)
    with pytest.raises(ValueError):
        aggregate_samples([], 8)


def test_partial_bookkeeping():
    samples = run_coupled_trial(_cfg(obs=(1.0,)), 0)
    agg = aggregate_samples([samples], 8, failed_indices=(3, 5))
    assert agg.partial
    assert agg.failed_trials == 2
    assert agg.failed_indices == (3, 5)


def test_aggregate_csv_format():
    cfg = _cfg(trials=3, obs=(0.5, 1.0))
    agg = estimate_chaos_energies(cfg)
    buf = io.StringIO()
    agg.to_csv(buf, header_meta={"b": 1, "a": "x"})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# a=x"
    assert lines[1] == "# b=1"
    assert lines[2] == "t,P_mean,K_mean,C_mean,total_mean,total_stderr,trials"
    assert len(lines) == 3 + 2
    cells = lines[3].split(",")
    assert float(cells[0]) == 0.5
    assert int(cells[6]) == 3
    # 17 significant digits round-trip bit-exactly
    assert float(lines[4].split(",")[4]) == agg.total_mean[1]


def test_marginal_bound_identity_and_scaling():
    cfg = _cfg(trials=3, obs=(0.5, 1.0))
    agg = estimate_chaos_energies(cfg)
    one = marginal_w2_bound(agg, 1, 8)
    assert np.array_equal(one, np.sqrt(agg.total_mean / 8.0))
    for k in (2, 5, 8):
        got = marginal_w2_bound(agg, k, 8)
        assert got == pytest.approx(math.sqrt(k) * one, rel=1e-15)
    with pytest.raises(ValueError):
        marginal_w2_bound(agg, 0, 8)
    with pytest.raises(ValueError):
        marginal_w2_bound(agg, 9, 8)
    with pytest.raises(ValueError):
        marginal_w2_bound(agg, 1, 16)


def test_pooled_marginals_shapes_and_t0_coincidence():
    cfg = _cfg(n=5, trials=6, obs=(0.0, 1.0))
    pooled = pooled_marginals(cfg)
    assert set(pooled) == {0.0, 1.0}
    disc, trac = pooled[0.0]
    assert disc.shape == (6, 4)  # (x, v) in 2d
    assert trac.shape == (6, 4)
    # both flows start from the same particle
    assert np.array_equal(disc, trac)
    disc1, trac1 = pooled[1.0]
    assert not np.array_equal(disc1, trac1)


def test_sznitman_constant_functional_vanishes():
    cfg = _cfg(n=8, trials=5, obs=(1.0,))
    val = sznitman_functional(cfg, lambda e: np.ones(e.count), t=1.0)
    assert val == 0.0


def test_sznitman_initial_variance_matches_sampling_theory():
    # at t = 0 the functional is Var(f) * (1/N + 1/M) for iid components
    cfg = _cfg(n=16, trials=100, n_ref=256, obs=(1.0,))
    val = sznitman_functional(cfg, lambda e: e.velocities[:, 0], t=0.0)
    expect = (1.0 / 3.0) * (1.0 / 16 + 1.0 / 256)
    assert 0.5 * expect < val < 2.0 * expect
    with pytest.raises(ValueError):
        sznitman_functional(cfg, lambda e: e.velocities[:, 0], t=2.0)


def test_force_fluctuation_zero_at_full_subsample():
    ref = sample_initial(INIT, 128, seed=11)
    val = force_fluctuation(ref, [0.5, 0.5], [0.1, -0.2], POWER, 128, 16)
    assert val == 0.0


def test_force_fluctuation_scales_inversely_with_subsample():
    ref = sample_initial(INIT, 1024, seed=12)
    small = force_fluctuation(ref, [0.5, 0.5], [0.0, 0.0], POWER, 32, 200, seed=1)
    large = force_fluctuation(ref, [0.5, 0.5], [0.0, 0.0], POWER, 128, 200, seed=2)
    ratio = small / large
    # expect about 128/32 = 4, loose band for Monte Carlo noise
    assert 2.0 < ratio < 8.0
    with pytest.raises(ValueError):
        force_fluctuation(ref, [0.5, 0.5], [0.0, 0.0], POWER, 2048, 16)
    with pytest.raises(ValueError):
        force_fluctuation(ref, [0.5, 0.5], [0.0, 0.0], POWER, 32, 1)


def test_sample_validation():
    with pytest.raises(ValueError):
        ChaosMetricsSample(t=0.0, P=-1.0, K=0.0, C=0.0, total=-2.0)
    with pytest.raises(ValueError):
        ChaosMetricsSample(t=0.0, P=1.0, K=0.0, C=0.0, total=3.0)
    s = ChaosMetricsSample(t=0.5, P=1.0, K=0.5, C=0.25, total=3.5)
    assert s.total == 2.0 * (s.P + s.K + s.C)


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(n=0)
    with pytest.raises(ValueError):
        _cfg(trials=0)
    with pytest.raises(ValueError):
        _cfg(n=8, n_ref=4)  # reference smaller than sample
    with pytest.raises(ValueError):
        _cfg(obs=(1.0, 0.5))
    with pytest.raises(ValueError):
        _cfg(obs=(0.5, 2.0))  # beyond t_end
    with pytest.raises(ValueError):
        _cfg(obs=())
    with pytest.raises(ValueError):
        estimate_chaos_energies(_cfg(trials=1))
    # force parameters demand theta_range on the init and vice versa
    from flocklab import ForceParams

    with pytest.raises(ValueError):
        CouplingConfig(
            n_particles=4,
            trials=2,
            kernel=POWER,
            init=INIT,
            integrator=IntegratorConfig(dt=0.1, t_end=1.0),
            master_seed=0,
            force=ForceParams(sigma=1.0, p=2.0, kappa=1.0),
        )


def test_default_observation_grid():
    cfg = _cfg(t_end=8.0, obs=None)
    assert cfg.obs_times[0] == 0.0
    assert len(cfg.obs_times) == 25
    assert cfg.obs_times[-1] == pytest.approx(8.0, rel=1e-12)
    assert all(b > a for a, b in zip(cfg.obs_times, cfg.obs_times[1:]))


def test_step_refinement_leaves_energies_stable():
    # the gap between flows is physical, integration error only perturbs it
    coarse = estimate_chaos_energies(_cfg(trials=4, dt=0.05, obs=(0.5, 1.0)))
    fine = estimate_chaos_energies(_cfg(trials=4, dt=0.025, obs=(0.5, 1.0)))
    assert fine.total_mean == pytest.approx(coarse.total_mean, rel=1e-5)
