"""Compiled pairwise sums against dense numpy references."""

import numpy as np
import pytest

from flocklab import KernelSpec, kernel_eval
from flocklab._pairsum import (
    alignment_consensus_cross,
    alignment_consensus_self,
    alignment_cross,
    alignment_self,
    kernel_code,
)

KERNELS = [
    KernelSpec(kind="power", lam=1.3, beta=0.7),   # general power path
    KernelSpec(kind="power", lam=1.0, beta=1.0),
    KernelSpec(kind="power", lam=2.0, beta=0.5),
    KernelSpec(kind="power", lam=0.5, beta=2.0),
    KernelSpec(kind="power", lam=1.1, beta=0.0),   # constant path
    KernelSpec(kind="constant", lam=0.8),
    KernelSpec(kind="tabulated", table=((0.0, 1.0), (0.5, 0.9), (2.0, 0.3), (5.0, 0.05))),
]


def _phi_matrix(kernel, xa, xb):
    d = xa[:, None, :] - xb[None, :, :]
    return kernel_eval(kernel, np.sqrt(np.einsum("ijk,ijk->ij", d, d)))


def _self_reference(kernel, x, v):
    phi = _phi_matrix(kernel, x, x)
    return (phi @ v - phi.sum(axis=1)[:, None] * v) / x.shape[0]


def _cross_reference(kernel, xt, vt, xs, vs):
    phi = _phi_matrix(kernel, xt, xs)
    return (phi @ vs - phi.sum(axis=1)[:, None] * vt) / xs.shape[0]


def test_kernel_code_dispatch():
    codes = [kernel_code(k) for k in KERNELS]
    assert codes == [0, 1, 2, 3, 4, 4, 5]


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_self_sum_matches_dense_reference(kernel, dim):
    rng = np.random.default_rng(42)
    for _ in range(8):
        n = int(rng.integers(2, 40))
        x = rng.normal(size=(n, dim))
        v = rng.normal(size=(n, dim))
        got = alignment_self(x, v, kernel)
        ref = _self_reference(kernel, x, v)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_cross_sum_matches_dense_reference(kernel, dim):
    rng = np.random.default_rng(43)
    for _ in range(8):
        n = int(rng.integers(1, 20))
        m = int(rng.integers(1, 50))
        xt = rng.normal(size=(n, dim))
        vt = rng.normal(size=(n, dim))
        xs = rng.normal(size=(m, dim))
        vs = rng.normal(size=(m, dim))
        got = alignment_cross(xt, vt, xs, vs, kernel)
        ref = _cross_reference(kernel, xt, vt, xs, vs)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-13)


def test_self_sum_is_conservative():
    # pair terms are antisymmetric: column sums cancel to rounding
    rng = np.random.default_rng(44)
    k = KernelSpec(kind="power", lam=1.0, beta=0.5)
    for _ in range(10):
        n = int(rng.integers(2, 200))
        x = rng.normal(size=(n, 2))
        v = rng.normal(size=(n, 2))
        total = alignment_self(x, v, k).sum(axis=0)
        assert np.all(np.abs(total) < 1e-12 * n)


def test_self_dim2_unrolled_matches_generic_pair():
    # at n=2 the unrolled dim-2 kernel and the generic one perform the same
    # float ops in the same order
    rng = np.random.default_rng(45)
    k = KernelSpec(kind="power", lam=1.0, beta=0.5)
    for _ in range(20):
        x = rng.normal(size=(2, 2))
        v = rng.normal(size=(2, 2))
        a = alignment_self(x, v, k)
        # embed in 3d with a zero coordinate: same distances, same weights
        x3 = np.hstack([x, np.zeros((2, 1))])
        v3 = np.hstack([v, np.zeros((2, 1))])
        b = alignment_self(x3, v3, k)
        assert np.array_equal(a, b[:, :2])
        assert np.all(b[:, 2] == 0.0)


def test_consensus_self_channels():
    rng = np.random.default_rng(46)
    for kernel in KERNELS[:3]:
        for dim in (2, 3):
            n = 25
            x = rng.normal(size=(n, dim))
            v = rng.normal(size=(n, dim))
            th = rng.uniform(0.5, 1.5, size=n)
            dv, dth = alignment_consensus_self(x, v, th, kernel)
            assert np.allclose(dv, _self_reference(kernel, x, v),
                               rtol=1e-12, atol=1e-13)
            # theta channel: same weights applied to the scalar difference
            ref_th = _self_reference(kernel, x, th[:, None])[:, 0]
            assert np.allclose(dth, ref_th, rtol=1e-12, atol=1e-13)
            assert abs(dth.sum()) < 1e-12 * n


def test_consensus_cross_channels():
    rng = np.random.default_rng(47)
    for kernel in (KERNELS[0], KERNELS[6]):
        for dim in (2, 4):
            xt = rng.normal(size=(6, dim))
            vt = rng.normal(size=(6, dim))
            tht = rng.uniform(0.5, 1.5, size=6)
            xs = rng.normal(size=(33, dim))
            vs = rng.normal(size=(33, dim))
            ths = rng.uniform(0.5, 1.5, size=33)
            dv, dth = alignment_consensus_cross(xt, vt, tht, xs, vs, ths, kernel)
            assert np.allclose(dv, _cross_reference(kernel, xt, vt, xs, vs),
                               rtol=1e-12, atol=1e-13)
            ref_th = _cross_reference(kernel, xt, tht[:, None], xs, ths[:, None])[:, 0]
            assert np.allclose(dth, ref_th, rtol=1e-12, atol=1e-13)


def test_cross_with_itself_matches_self_sum():
    # the j == i term of the cross sum is phi(0) (v_i - v_i) = 0, so feeding
    # an ensemble as its own source reproduces the self interaction
    rng = np.random.default_rng(48)
    k = KernelSpec(kind="power", lam=1.0, beta=0.5)
    for dim in (2, 3):
        x = rng.normal(size=(30, dim))
        v = rng.normal(size=(30, dim))
        a = alignment_self(x, v, k)
        b = alignment_cross(x, v, x, v, k)
        assert np.allclose(a, b, rtol=1e-11, atol=1e-12)


def test_tabulated_matches_interp_everywhere():
    rng = np.random.default_rng(49)
    table = ((0.0, 2.0), (0.7, 1.1), (1.3, 0.6), (4.0, 0.2))
    k = KernelSpec(kind="tabulated", table=table)
    tr = np.array([p[0] for p in table])
    tv = np.array([p[1] for p in table])
    # includes points below the first radius and beyond the last
    x = np.zeros((40, 2))
    x[:, 0] = rng.uniform(-6.0, 6.0, size=40)
    v = rng.normal(size=(40, 2))
    got = alignment_cross(np.zeros((1, 2)), np.zeros((1, 2)), x, v, k)
    r = np.abs(x[:, 0])
    phi = np.interp(r, tr, tv)
    ref = (phi[:, None] * v).sum(axis=0) / 40.0
    assert np.allclose(got[0], ref, rtol=1e-12, atol=1e-14)
