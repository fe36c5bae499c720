"""Compiled pairwise-interaction sums.

These kernels are the only O(N*M) code in the package.  Layout is plain
C-contiguous (count, dim) float64; dim == 2 gets hand-unrolled variants since
that is the hot path.  Self-interaction kernels accumulate each unordered
pair once (the pair term is antisymmetric, so visiting (i, j) once and
updating both rows halves the work); cross kernels hoist the target row out
of the inner loop so only the kernel weight and weighted sums accumulate.

The communication weight is selected by an integer code baked into the
compiled function (one small family of jitted closures per code) so the
per-pair weight evaluation stays branch-free:

    0: lam * (1 + r^2) ** (-beta / 2)   general power law
    1: beta == 1 fast path
    2: beta == 1/2 fast path
    3: beta == 2 fast path
    4: constant lam
    5: piecewise-linear table of (r, value), clamped at both ends

fastmath is restricted to value-safe flags (no reciprocal approximations),
keeping results reproducible across runs on the same platform.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .core import KernelSpec

_FM = {"reassoc", "contract", "nsz", "arcp"}

_EMPTY = np.empty(0, dtype=np.float64)


def kernel_code(kernel: KernelSpec) -> int:
    if kernel.kind == "constant":
        return 4
    if kernel.kind == "tabulated":
        return 5
    if kernel.beta == 0.0:
        return 4
    if kernel.beta == 1.0:
        return 1
    if kernel.beta == 0.5:
        return 2
    if kernel.beta == 2.0:
        return 3
    return 0


@njit(inline="always", nogil=True, cache=True)
def _interp_clamped(r, tr, tv):
    n = tr.shape[0]
    if r <= tr[0]:
        return tv[0]
    if r >= tr[n - 1]:
        return tv[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tr[mid] <= r:
            lo = mid
        else:
            hi = mid
    w = (r - tr[lo]) / (tr[hi] - tr[lo])
    return tv[lo] + w * (tv[hi] - tv[lo])


def _build(code: int):
    """Compile the kernel family for one weight code."""

    if code == 0:

        @njit(inline="always", nogil=True, fastmath=_FM)
        def phi(r2, lam, beta, tr, tv):
            return lam * (1.0 + r2) ** (-0.5 * beta)

    elif code == 1:

        @njit(inline="always", nogil=True, fastmath=_FM)
        def phi(r2, lam, beta, tr, tv):
            return lam / np.sqrt(1.0 + r2)

    elif code == 2:

        @njit(inline="always", nogil=True, fastmath=_FM)
        def phi(r2, lam, beta, tr, tv):
            return lam / np.sqrt(np.sqrt(1.0 + r2))

    elif code == 3:

        @njit(inline="always", nogil=True, fastmath=_FM)
        def phi(r2, lam, beta, tr, tv):
            return lam / (1.0 + r2)

    elif code == 4:

        @njit(inline="always", nogil=True, fastmath=_FM)
        def phi(r2, lam, beta, tr, tv):
            return lam

    else:

        @njit(inline="always", nogil=True, fastmath=_FM)
        def phi(r2, lam, beta, tr, tv):
            return _interp_clamped(np.sqrt(r2), tr, tv)

    @njit(nogil=True, fastmath=_FM)
    def self2(x, v, lam, beta, tr, tv, out):
        # out[i] += sum_{j != i} phi(|x_i - x_j|) (v_j - v_i), pairs visited once
        n = x.shape[0]
        for i in range(n):
            xi0 = x[i, 0]
            xi1 = x[i, 1]
            vi0 = v[i, 0]
            vi1 = v[i, 1]
            acc0 = 0.0
            acc1 = 0.0
            for j in range(i + 1, n):
                dx0 = xi0 - x[j, 0]
                dx1 = xi1 - x[j, 1]
                p = phi(dx0 * dx0 + dx1 * dx1, lam, beta, tr, tv)
                dv0 = p * (v[j, 0] - vi0)
                dv1 = p * (v[j, 1] - vi1)
                acc0 += dv0
                acc1 += dv1
                out[j, 0] -= dv0
                out[j, 1] -= dv1
            out[i, 0] += acc0
            out[i, 1] += acc1

    @njit(nogil=True, fastmath=_FM)
    def self_nd(x, v, lam, beta, tr, tv, out):
        n = x.shape[0]
        d = x.shape[1]
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(d):
                    dx = x[i, k] - x[j, k]
                    r2 += dx * dx
                p = phi(r2, lam, beta, tr, tv)
                for k in range(d):
                    dv = p * (v[j, k] - v[i, k])
                    out[i, k] += dv
                    out[j, k] -= dv

    @njit(nogil=True, fastmath=_FM)
    def self2_theta(x, v, th, lam, beta, tr, tv, out, out_th):
        n = x.shape[0]
        for i in range(n):
            xi0 = x[i, 0]
            xi1 = x[i, 1]
            vi0 = v[i, 0]
            vi1 = v[i, 1]
            ti = th[i]
            acc0 = 0.0
            acc1 = 0.0
            acct = 0.0
            for j in range(i + 1, n):
                dx0 = xi0 - x[j, 0]
                dx1 = xi1 - x[j, 1]
                p = phi(dx0 * dx0 + dx1 * dx1, lam, beta, tr, tv)
                dv0 = p * (v[j, 0] - vi0)
                dv1 = p * (v[j, 1] - vi1)
                dth = p * (th[j] - ti)
                acc0 += dv0
                acc1 += dv1
                acct += dth
                out[j, 0] -= dv0
                out[j, 1] -= dv1
                out_th[j] -= dth
            out[i, 0] += acc0
            out[i, 1] += acc1
            out_th[i] += acct

    @njit(nogil=True, fastmath=_FM)
    def self_nd_theta(x, v, th, lam, beta, tr, tv, out, out_th):
        n = x.shape[0]
        d = x.shape[1]
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(d):
                    dx = x[i, k] - x[j, k]
                    r2 += dx * dx
                p = phi(r2, lam, beta, tr, tv)
                for k in range(d):
                    dv = p * (v[j, k] - v[i, k])
                    out[i, k] += dv
                    out[j, k] -= dv
                dth = p * (th[j] - th[i])
                out_th[i] += dth
                out_th[j] -= dth

    @njit(nogil=True, fastmath=_FM)
    def cross2(xt, vt, xs, vs, lam, beta, tr, tv, out):
        # out[a] = sum_j phi(|xt_a - xs_j|) (vs_j - vt_a)
        na = xt.shape[0]
        m = xs.shape[0]
        for a in range(na):
            xa0 = xt[a, 0]
            xa1 = xt[a, 1]
            s_p = 0.0
            s0 = 0.0
            s1 = 0.0
            for j in range(m):
                dx0 = xa0 - xs[j, 0]
                dx1 = xa1 - xs[j, 1]
                p = phi(dx0 * dx0 + dx1 * dx1, lam, beta, tr, tv)
                s_p += p
                s0 += p * vs[j, 0]
                s1 += p * vs[j, 1]
            out[a, 0] = s0 - s_p * vt[a, 0]
            out[a, 1] = s1 - s_p * vt[a, 1]

    @njit(nogil=True, fastmath=_FM)
    def cross_nd(xt, vt, xs, vs, lam, beta, tr, tv, out):
        na = xt.shape[0]
        m = xs.shape[0]
        d = xt.shape[1]
        for a in range(na):
            s_p = 0.0
            for k in range(d):
                out[a, k] = 0.0
            for j in range(m):
                r2 = 0.0
                for k in range(d):
                    dx = xt[a, k] - xs[j, k]
                    r2 += dx * dx
                p = phi(r2, lam, beta, tr, tv)
                s_p += p
                for k in range(d):
                    out[a, k] += p * vs[j, k]
            for k in range(d):
                out[a, k] -= s_p * vt[a, k]

    @njit(nogil=True, fastmath=_FM)
    def cross2_theta(xt, vt, tht, xs, vs, ths, lam, beta, tr, tv, out, out_th):
        na = xt.shape[0]
        m = xs.shape[0]
        for a in range(na):
            xa0 = xt[a, 0]
            xa1 = xt[a, 1]
            s_p = 0.0
            s0 = 0.0
            s1 = 0.0
            st = 0.0
            for j in range(m):
                dx0 = xa0 - xs[j, 0]
                dx1 = xa1 - xs[j, 1]
                p = phi(dx0 * dx0 + dx1 * dx1, lam, beta, tr, tv)
                s_p += p
                s0 += p * vs[j, 0]
                s1 += p * vs[j, 1]
                st += p * ths[j]
            out[a, 0] = s0 - s_p * vt[a, 0]
            out[a, 1] = s1 - s_p * vt[a, 1]
            out_th[a] = st - s_p * tht[a]

    @njit(nogil=True, fastmath=_FM)
    def cross_nd_theta(xt, vt, tht, xs, vs, ths, lam, beta, tr, tv, out, out_th):
        na = xt.shape[0]
        m = xs.shape[0]
        d = xt.shape[1]
        for a in range(na):
            s_p = 0.0
            st = 0.0
            for k in range(d):
                out[a, k] = 0.0
            for j in range(m):
                r2 = 0.0
                for k in range(d):
                    dx = xt[a, k] - xs[j, k]
                    r2 += dx * dx
                p = phi(r2, lam, beta, tr, tv)
                s_p += p
                st += p * ths[j]
                for k in range(d):
                    out[a, k] += p * vs[j, k]
            for k in range(d):
                out[a, k] -= s_p * vt[a, k]
            out_th[a] = st - s_p * tht[a]

    return {
        "self2": self2,
        "self_nd": self_nd,
        "self2_theta": self2_theta,
        "self_nd_theta": self_nd_theta,
        "cross2": cross2,
        "cross_nd": cross_nd,
        "cross2_theta": cross2_theta,
        "cross_nd_theta": cross_nd_theta,
    }


_FAMILIES: dict[int, dict] = {}


def _family(kernel: KernelSpec) -> tuple[dict, float, float, np.ndarray, np.ndarray]:
    code = kernel_code(kernel)
    fam = _FAMILIES.get(code)
    if fam is None:
        fam = _build(code)
        _FAMILIES[code] = fam
    if kernel.kind == "tabulated":
        tr, tv = kernel.table_arrays()
        return fam, 0.0, 0.0, tr, tv
    return fam, kernel.lam, kernel.beta, _EMPTY, _EMPTY


def alignment_self(x: np.ndarray, v: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """(1/N) sum_j phi(|x_i - x_j|)(v_j - v_i) for every particle i."""
    fam, lam, beta, tr, tv = _family(kernel)
    out = np.zeros_like(x)
    if x.shape[1] == 2:
        fam["self2"](x, v, lam, beta, tr, tv, out)
    else:
        fam["self_nd"](x, v, lam, beta, tr, tv, out)
    out *= 1.0 / x.shape[0]
    return out


def alignment_consensus_self(
    x: np.ndarray, v: np.ndarray, th: np.ndarray, kernel: KernelSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Fused self-interaction sums for the forced model.

    Returns ``(1/N) sum_j phi (v_j - v_i)`` and ``(1/N) sum_j phi (th_j - th_i)``
    (the caller applies its own prefactor to the second channel).
    """
    fam, lam, beta, tr, tv = _family(kernel)
    out = np.zeros_like(x)
    out_th = np.zeros_like(th)
    if x.shape[1] == 2:
        fam["self2_theta"](x, v, th, lam, beta, tr, tv, out, out_th)
    else:
        fam["self_nd_theta"](x, v, th, lam, beta, tr, tv, out, out_th)
    inv = 1.0 / x.shape[0]
    out *= inv
    out_th *= inv
    return out, out_th


def alignment_cross(
    xt: np.ndarray, vt: np.ndarray, xs: np.ndarray, vs: np.ndarray, kernel: KernelSpec
) -> np.ndarray:
    """(1/M) sum_j phi(|xt_i - xs_j|)(vs_j - vt_i) against a source ensemble."""
    fam, lam, beta, tr, tv = _family(kernel)
    out = np.empty_like(xt)
    if xt.shape[1] == 2:
        fam["cross2"](xt, vt, xs, vs, lam, beta, tr, tv, out)
    else:
        fam["cross_nd"](xt, vt, xs, vs, lam, beta, tr, tv, out)
    out *= 1.0 / xs.shape[0]
    return out


def alignment_consensus_cross(
    xt: np.ndarray,
    vt: np.ndarray,
    tht: np.ndarray,
    xs: np.ndarray,
    vs: np.ndarray,
    ths: np.ndarray,
    kernel: KernelSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Fused cross-interaction sums for the forced model."""
    fam, lam, beta, tr, tv = _family(kernel)
    out = np.empty_like(xt)
    out_th = np.empty_like(tht)
    if xt.shape[1] == 2:
        fam["cross2_theta"](xt, vt, tht, xs, vs, ths, lam, beta, tr, tv, out, out_th)
    else:
        fam["cross_nd_theta"](xt, vt, tht, xs, vs, ths, lam, beta, tr, tv, out, out_th)
    inv = 1.0 / xs.shape[0]
    out *= inv
    out_th *= inv
    return out, out_th
