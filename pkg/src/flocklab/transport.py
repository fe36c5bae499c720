"""Exact Wasserstein-2 distance between small equal-size empirical measures.

An empirical measure is a plain (m, d) float array of support points with
implied uniform weights 1/m.  In the equal-size uniform case optimal
transport reduces to a minimum-cost assignment on the squared-distance
matrix, which is solved exactly (no entropic approximation): W2 must serve as
ground truth in one-sided inequality tests, so approximations are useless.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["w2_exact", "w2_bruteforce"]

_MAX_EXACT = 2048
_MAX_BRUTE = 8


def _as_points(a, name: str) -> np.ndarray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"{name} must be a nonempty (m, d) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite entries")
    return pts


def _cost_matrix(mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    diff = mu[:, None, :] - nu[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def w2_exact(mu, nu) -> float:
    """W2 between equal-size uniform empirical measures.

    sqrt( (1/m) * min over assignments of sum |x_i - y_pi(i)|^2 ), solved with
    an exact shortest-augmenting-path assignment.
    """
    mu = _as_points(mu, "mu")
    nu = _as_points(nu, "nu")
    if mu.shape != nu.shape:
        raise ValueError(
            f"equal-size equal-dimension measures required, got {mu.shape} vs {nu.shape}"
        )
    m = mu.shape[0]
    if m > _MAX_EXACT:
        raise ValueError(f"w2_exact supports at most {_MAX_EXACT} points, got {m}")
    cost = _cost_matrix(mu, nu)
    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum())
    return float(np.sqrt(max(total, 0.0) / m))


def w2_bruteforce(mu, nu) -> float:
    """Exhaustive-permutation W2; ground-truth oracle for w2_exact (m <= 8)."""
    mu = _as_points(mu, "mu")
    nu = _as_points(nu, "nu")
    if mu.shape != nu.shape:
        raise ValueError(
            f"equal-size equal-dimension measures required, got {mu.shape} vs {nu.shape}"
        )
    m = mu.shape[0]
    if m > _MAX_BRUTE:
        raise ValueError(f"w2_bruteforce refuses m > {_MAX_BRUTE} (factorial cost)")
    cost = _cost_matrix(mu, nu)
    idx = range(m)
    best = min(sum(cost[i, pi[i]] for i in idx) for pi in permutations(idx))
    return float(np.sqrt(max(float(best), 0.0) / m))
