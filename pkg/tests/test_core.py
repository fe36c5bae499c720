"""Kernel evaluation, seeding, sampling, and ensemble invariants."""

import numpy as np
import pytest

from flocklab import (
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


# ---------------------------------------------------------------------------
# kernels


def test_power_kernel_frozen_value():
    # lam (1 + r^2)^(-beta/2) at lam=1, beta=0.5, r=3 is 10^(-1/4)
    k = KernelSpec(kind="power", lam=1.0, beta=0.5)
    assert kernel_eval(k, 3.0) == pytest.approx(0.5623413251903491, abs=1e-16)
    assert kernel_eval(k, 0.0) == 1.0


def test_power_kernel_vectorized_matches_scalar():
    # numpy's simd pow can differ from the scalar libm path by 1 ulp
    k = KernelSpec(kind="power", lam=2.5, beta=1.25)
    r = np.linspace(0.0, 7.0, 29)
    vec = kernel_eval(k, r)
    assert vec.shape == r.shape
    for i, ri in enumerate(r):
        assert vec[i] == pytest.approx(kernel_eval(k, float(ri)), rel=1e-15)


def test_constant_kernel():
    k = KernelSpec(kind="constant", lam=0.75)
    assert kernel_eval(k, 0.0) == 0.75
    assert kernel_eval(k, 1e6) == 0.75
    assert np.all(kernel_eval(k, np.array([0.0, 2.0, 9.0])) == 0.75)


def test_tabulated_kernel_interpolates_and_clamps():
    k = KernelSpec(kind="tabulated", table=((0.0, 1.0), (1.0, 0.5), (2.0, 0.1)))
    assert kernel_eval(k, 0.5) == pytest.approx(0.75)
    assert kernel_eval(k, 1.5) == pytest.approx(0.3)
    # clamped on both ends
    assert kernel_eval(k, 100.0) == pytest.approx(0.1)
    k2 = KernelSpec(kind="tabulated", table=((1.0, 0.8), (2.0, 0.2)))
    assert kernel_eval(k2, 0.0) == pytest.approx(0.8)


def test_kernel_monotone_decreasing():
    rng = np.random.default_rng(91)
    for _ in range(20):
        beta = float(rng.uniform(0.0, 3.0))
        k = KernelSpec(kind="power", lam=float(rng.uniform(0.1, 5.0)), beta=beta)
        r = np.sort(rng.uniform(0.0, 10.0, size=17))
        vals = kernel_eval(k, r)
        assert np.all(np.diff(vals) <= 1e-15)
        assert np.all(vals > 0.0)


def test_kernel_rejects_negative_distance():
    k = KernelSpec(kind="power", lam=1.0, beta=0.5)
    with pytest.raises(ValueError):
        kernel_eval(k, -0.1)
    with pytest.raises(ValueError):
        kernel_eval(k, np.array([1.0, -2.0]))


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelSpec(kind="gaussian")
    with pytest.raises(ValueError):
        KernelSpec(kind="power", lam=0.0)
    with pytest.raises(ValueError):
        KernelSpec(kind="power", beta=-1.0)
    with pytest.raises(ValueError):
        KernelSpec(kind="tabulated", table=())
    with pytest.raises(ValueError):
        KernelSpec(kind="tabulated", table=((0.0, 1.0), (0.0, 0.5)))
    with pytest.raises(ValueError):
        KernelSpec(kind="tabulated", table=((0.0, 1.0), (1.0, -0.5)))
    with pytest.raises(ValueError):
        KernelSpec(kind="power", table=((0.0, 1.0),))


def test_heavy_tail_classification():
    assert kernel_heavy_tail_check(KernelSpec(kind="power", beta=0.5))
    assert kernel_heavy_tail_check(KernelSpec(kind="power", beta=1.0))
    assert not kernel_heavy_tail_check(KernelSpec(kind="power", beta=1.01))
    assert kernel_heavy_tail_check(KernelSpec(kind="constant", lam=3.0))
    assert kernel_heavy_tail_check(
        KernelSpec(kind="tabulated", table=((0.0, 1.0), (1.0, 0.2)))
    )
    assert not kernel_heavy_tail_check(
        KernelSpec(kind="tabulated", table=((0.0, 1.0), (1.0, 0.0)))
    )


# ---------------------------------------------------------------------------
# force params


def test_force_params_validation():
    ForceParams(sigma=1.0, p=2.0, kappa=0.5)
    with pytest.raises(ValueError):
        ForceParams(sigma=0.0, p=2.0, kappa=1.0)
    with pytest.raises(ValueError):
        ForceParams(sigma=1.0, p=0.5, kappa=1.0)
    with pytest.raises(ValueError):
        ForceParams(sigma=1.0, p=2.0, kappa=-1.0)
    with pytest.raises(ValueError):
        ForceParams(sigma=float("inf"), p=2.0, kappa=1.0)


# ---------------------------------------------------------------------------
# ensembles


def test_ensemble_arrays_are_copied_and_read_only():
    x = np.zeros((3, 2))
    v = np.ones((3, 2))
    ens = ParticleEnsemble(x, v)
    x[0, 0] = 99.0
    assert ens.positions[0, 0] == 0.0
    with pytest.raises(ValueError):
        ens.velocities[0, 0] = 5.0


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((2, 2)), np.full((2, 2), np.nan))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((2, 2)), np.zeros((2, 2)), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((2, 2)), np.zeros((2, 2)), np.array([1.0]))


def test_ensemble_subset():
    rng = np.random.default_rng(5)
    ens = ParticleEnsemble(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)),
                           rng.uniform(0.5, 1.5, size=6), time=2.5)
    sub = ens.subset(4)
    assert sub.count == 4
    assert sub.time == 2.5
    assert np.array_equal(sub.positions, ens.positions[:4])
    assert np.array_equal(sub.thetas, ens.thetas[:4])
    with pytest.raises(ValueError):
        ens.subset(0)
    with pytest.raises(ValueError):
        ens.subset(7)


# ---------------------------------------------------------------------------
# seeding


def test_derive_seed_deterministic_and_distinct():
    seen = set()
    for master in (0, 1, 7, 2**63):
        for stream in range(16):
            s = derive_seed(master, stream)
            assert s == derive_seed(master, stream)
            assert 0 <= s < 2**64
            seen.add(s)
    # 4 masters x 16 streams, all distinct
    assert len(seen) == 64
    with pytest.raises(ValueError):
        derive_seed(3, -1)


def test_make_rng_reproducible_and_stream_independent():
    a = make_rng(derive_seed(11, 0)).uniform(size=8)
    b = make_rng(derive_seed(11, 0)).uniform(size=8)
    c = make_rng(derive_seed(11, 1)).uniform(size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# sampling


def _box_init(theta=None):
    return InitialDistribution(
        position_box=((0.0, 1.0), (0.0, 2.0)),
        velocity_region=VelocityBox(((-1.0, 1.0), (0.0, 3.0))),
        theta_range=theta,
    )


def test_sample_initial_reproducible():
    ens1 = sample_initial(_box_init((0.5, 1.5)), 32, 123)
    ens2 = sample_initial(_box_init((0.5, 1.5)), 32, 123)
    assert np.array_equal(ens1.positions, ens2.positions)
    assert np.array_equal(ens1.velocities, ens2.velocities)
    assert np.array_equal(ens1.thetas, ens2.thetas)
    ens3 = sample_initial(_box_init((0.5, 1.5)), 32, 124)
    assert not np.array_equal(ens1.positions, ens3.positions)


def test_sample_initial_respects_supports():
    rng = np.random.default_rng(17)
    for _ in range(10):
        seed = int(rng.integers(0, 2**32))
        ens = sample_initial(_box_init((0.5, 1.5)), 64, seed)
        assert np.all(ens.positions[:, 0] >= 0.0) and np.all(ens.positions[:, 0] <= 1.0)
        assert np.all(ens.positions[:, 1] >= 0.0) and np.all(ens.positions[:, 1] <= 2.0)
        assert np.all(ens.velocities[:, 0] >= -1.0) and np.all(ens.velocities[:, 0] <= 1.0)
        assert np.all(ens.velocities[:, 1] >= 0.0) and np.all(ens.velocities[:, 1] <= 3.0)
        assert np.all(ens.thetas >= 0.5) and np.all(ens.thetas <= 1.5)


def test_sample_initial_moments():
    # empirical means within 5 sigma / sqrt(N) of the box centers
    n = 4096
    ens = sample_initial(_box_init(), n, 999)
    for col, (lo, hi) in zip(ens.positions.T, ((0.0, 1.0), (0.0, 2.0))):
        sd = (hi - lo) / np.sqrt(12.0)
        assert abs(col.mean() - 0.5 * (lo + hi)) < 5.0 * sd / np.sqrt(n)
    for col, (lo, hi) in zip(ens.velocities.T, ((-1.0, 1.0), (0.0, 3.0))):
        sd = (hi - lo) / np.sqrt(12.0)
        assert abs(col.mean() - 0.5 * (lo + hi)) < 5.0 * sd / np.sqrt(n)


def test_cone_samples_lie_in_cone():
    rng = np.random.default_rng(31)
    for dim in (2, 3, 4):
        axis = tuple(0.0 for _ in range(dim - 1)) + (1.0,)
        cone = VelocityCone(axis=axis, eps=0.5, speed_min=0.5, speed_max=2.0)
        dist = InitialDistribution(
            position_box=tuple((0.0, 1.0) for _ in range(dim)),
            velocity_region=cone,
        )
        for _ in range(5):
            ens = sample_initial(dist, 50, int(rng.integers(0, 2**32)))
            # the sampler's acceptance test is the same expression, so the
            # margin of a fresh sample is nonnegative exactly
            assert sector_margin(ens.velocities, axis, 0.5) >= 0.0
            speeds = np.linalg.norm(ens.velocities, axis=1)
            assert np.all(speeds >= 0.5 - 1e-12) and np.all(speeds <= 2.0 + 1e-12)


def test_cone_eps_one_is_deterministic_direction():
    cone = VelocityCone(axis=(3.0, 4.0), eps=1.0, speed_min=2.0, speed_max=2.0)
    dist = InitialDistribution(position_box=((0.0, 1.0), (0.0, 1.0)),
                               velocity_region=cone)
    ens = sample_initial(dist, 10, 7)
    expect = 2.0 * np.array([0.6, 0.8])
    assert np.allclose(ens.velocities, expect, atol=1e-15)


def test_cone_speed_distribution_uniform():
    cone = VelocityCone(axis=(0.0, 1.0), eps=0.3, speed_min=1.0, speed_max=3.0)
    dist = InitialDistribution(position_box=((0.0, 1.0), (0.0, 1.0)),
                               velocity_region=cone)
    ens = sample_initial(dist, 4096, 55)
    speeds = np.linalg.norm(ens.velocities, axis=1)
    assert abs(speeds.mean() - 2.0) < 5.0 * (2.0 / np.sqrt(12.0)) / np.sqrt(4096)


def test_sector_margin_validation():
    v = np.zeros((3, 2))
    with pytest.raises(ValueError):
        sector_margin(np.zeros(3), (1.0, 0.0), 0.5)
    with pytest.raises(ValueError):
        sector_margin(v, (1.0, 0.0, 0.0), 0.5)
    with pytest.raises(ValueError):
        sector_margin(v, (0.0, 0.0), 0.5)


def test_sector_margin_known_values():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    # axis e1: second vector is orthogonal, margin = 0 - eps
    assert sector_margin(v, (1.0, 0.0), 0.25) == pytest.approx(-0.25)
    assert sector_margin(np.array([[2.0, 0.0]]), (1.0, 0.0), 0.5) == pytest.approx(1.0)


def test_initial_distribution_validation():
    with pytest.raises(ValueError):
        InitialDistribution(position_box=((1.0, 0.0),),
                            velocity_region=VelocityBox(((-1.0, 1.0),)))
    with pytest.raises(ValueError):
        InitialDistribution(position_box=((0.0, 1.0), (0.0, 1.0)),
                            velocity_region=VelocityBox(((-1.0, 1.0),)))
    with pytest.raises(ValueError):
        InitialDistribution(position_box=((0.0, 1.0),),
                            velocity_region=VelocityBox(((-1.0, 1.0),)),
                            theta_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        InitialDistribution(position_box=((0.0, 1.0),),
                            velocity_region=VelocityBox(((-1.0, 1.0),)),
                            theta_range=(1.5, 1.0))
    with pytest.raises(ValueError):
        VelocityCone(axis=(1.0, 0.0), eps=0.0, speed_min=1.0, speed_max=1.0)
    with pytest.raises(ValueError):
        VelocityCone(axis=(1.0, 0.0), eps=0.5, speed_min=0.0, speed_max=1.0)
    with pytest.raises(ValueError):
        VelocityCone(axis=(0.0, 0.0), eps=0.5, speed_min=1.0, speed_max=1.0)
