"""Scalar envelope systems dominating the coupled energies.

The chaos estimates reduce to differential inequalities for x = 1 + P^(1/2),
y = K^(1/2) (and z = C^(1/2) in the forced case).  The right-hand sides are
non-negative and monotone in the state, so the equality system integrated
here dominates every solution of the inequality system (standard comparison
principle for cooperative systems); verifying the claimed growth bounds on
the equality solution verifies them for all of them.

Systems (from (x, y[, z]) = (1, 0[, 0])):

    plain:   dx/dt = y,  dy/dt = c e^(-delta t) x
    forced:  dx/dt = y,  dy/dt = c e^(-delta t) (x + y) + c z,
             dz/dt = c e^(-delta t) x
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "OdiState",
    "OdiTrajectory",
    "integrate_odi_forceless",
    "integrate_odi_forced",
    "forceless_envelope_constants",
    "forced_envelope_constants",
]


@dataclass(frozen=True)
class OdiState:
    t: float
    x: float
    y: float
    z: float | None = None


@dataclass(frozen=True)
class OdiTrajectory:
    """Column-wise trajectory; z is None for the plain system."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None

    def __len__(self) -> int:
        return self.t.shape[0]

    def state(self, i: int) -> OdiState:
        z = None if self.z is None else float(self.z[i])
        return OdiState(float(self.t[i]), float(self.x[i]), float(self.y[i]), z)


@njit(cache=True)
def _run2(c, delta, dt, n_full, rem, f1, f2, t_out, x_out, y_out):
    x = 1.0
    y = 0.0
    t = 0.0
    t_out[0] = 0.0
    x_out[0] = x
    y_out[0] = y
    n_total = n_full + (1 if rem > 0.0 else 0)
    for k in range(1, n_total + 1):
        h = dt if k <= n_full else rem
        kx1 = f1 * y
        ky1 = f2 * c * math.exp(-delta * t) * x
        e2 = math.exp(-delta * (t + 0.5 * h))
        kx2 = f1 * (y + 0.5 * h * ky1)
        ky2 = f2 * c * e2 * (x + 0.5 * h * kx1)
        kx3 = f1 * (y + 0.5 * h * ky2)
        ky3 = f2 * c * e2 * (x + 0.5 * h * kx2)
        e4 = math.exp(-delta * (t + h))
        kx4 = f1 * (y + h * ky3)
        ky4 = f2 * c * e4 * (x + h * kx3)
        x += h / 6.0 * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4)
        y += h / 6.0 * (ky1 + 2.0 * ky2 + 2.0 * ky3 + ky4)
        t += h
        t_out[k] = t
        x_out[k] = x
        y_out[k] = y


@njit(cache=True)
def _run3(c, delta, dt, n_full, rem, f1, f2, f3, t_out, x_out, y_out, z_out):
    x = 1.0
    y = 0.0
    z = 0.0
    t = 0.0
    t_out[0] = 0.0
    x_out[0] = x
    y_out[0] = y
    z_out[0] = z
    n_total = n_full + (1 if rem > 0.0 else 0)
    for k in range(1, n_total + 1):
        h = dt if k <= n_full else rem
        e1 = math.exp(-delta * t)
        kx1 = f1 * y
        ky1 = f2 * (c * e1 * (x + y) + c * z)
        kz1 = f3 * c * e1 * x
        e2 = math.exp(-delta * (t + 0.5 * h))
        x2 = x + 0.5 * h * kx1
        y2 = y + 0.5 * h * ky1
        z2 = z + 0.5 * h * kz1
        kx2 = f1 * y2
        ky2 = f2 * (c * e2 * (x2 + y2) + c * z2)
        kz2 = f3 * c * e2 * x2
        x3 = x + 0.5 * h * kx2
        y3 = y + 0.5 * h * ky2
        z3 = z + 0.5 * h * kz2
        kx3 = f1 * y3
        ky3 = f2 * (c * e2 * (x3 + y3) + c * z3)
        kz3 = f3 * c * e2 * x3
        e4 = math.exp(-delta * (t + h))
        x4 = x + h * kx3
        y4 = y + h * ky3
        z4 = z + h * kz3
        kx4 = f1 * y4
        ky4 = f2 * (c * e4 * (x4 + y4) + c * z4)
        kz4 = f3 * c * e4 * x4
        x += h / 6.0 * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4)
        y += h / 6.0 * (ky1 + 2.0 * ky2 + 2.0 * ky3 + ky4)
        z += h / 6.0 * (kz1 + 2.0 * kz2 + 2.0 * kz3 + kz4)
        t += h
        t_out[k] = t
        x_out[k] = x
        y_out[k] = y
        z_out[k] = z


def _plan(c: float, delta: float, t_end: float, dt: float) -> tuple[int, float]:
    if not (math.isfinite(c) and c >= 0.0):
        raise ValueError("c must be finite and non-negative")
    if not (math.isfinite(delta) and delta > 0.0):
        raise ValueError("delta must be positive")
    if not (math.isfinite(t_end) and t_end > 0.0):
        raise ValueError("t_end must be positive")
    if not (math.isfinite(dt) and 0.0 < dt <= t_end):
        raise ValueError("dt must satisfy 0 < dt <= t_end")
    n_full = int(math.floor(t_end / dt + 1e-9))
    rem = t_end - n_full * dt
    if rem <= dt * 1e-9:
        rem = 0.0
    return n_full, rem


def _check_finite(traj: OdiTrajectory) -> OdiTrajectory:
    cols = [traj.x, traj.y] + ([] if traj.z is None else [traj.z])
    for col in cols:
        if not np.all(np.isfinite(col)):
            raise FloatingPointError("envelope integration produced non-finite values")
    return traj


def integrate_odi_forceless(
    c: float, delta: float, t_end: float, dt: float = 1e-4,
    damping: tuple[float, float] = (1.0, 1.0),
) -> OdiTrajectory:
    """Integrate the plain envelope system from (x, y) = (1, 0).

    ``damping`` scales each right-hand side by a factor in [0, 1]; the
    undamped trajectory dominates every damped one (comparison principle),
    which the tests exercise directly.
    """
    n_full, rem = _plan(c, delta, t_end, dt)
    f1, f2 = (float(f) for f in damping)
    if not (0.0 <= f1 <= 1.0 and 0.0 <= f2 <= 1.0):
        raise ValueError("damping factors must lie in [0, 1]")
    n = n_full + (1 if rem > 0.0 else 0) + 1
    t = np.empty(n)
    x = np.empty(n)
    y = np.empty(n)
    _run2(c, delta, dt, n_full, rem, f1, f2, t, x, y)
    return _check_finite(OdiTrajectory(t, x, y))


def integrate_odi_forced(
    c: float, delta: float, t_end: float, dt: float = 1e-4,
    damping: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> OdiTrajectory:
    """Integrate the forced envelope system from (x, y, z) = (1, 0, 0)."""
    n_full, rem = _plan(c, delta, t_end, dt)
    f1, f2, f3 = (float(f) for f in damping)
    if not all(0.0 <= f <= 1.0 for f in (f1, f2, f3)):
        raise ValueError("damping factors must lie in [0, 1]")
    n = n_full + (1 if rem > 0.0 else 0) + 1
    t = np.empty(n)
    x = np.empty(n)
    y = np.empty(n)
    z = np.empty(n)
    _run3(c, delta, dt, n_full, rem, f1, f2, f3, t, x, y, z)
    return _check_finite(OdiTrajectory(t, x, y, z))


def _ratio_max(num: np.ndarray, den: np.ndarray) -> float:
    mask = den > 0.0
    if not np.any(mask):
        return 0.0
    return float(np.max(num[mask] / den[mask]))


def forceless_envelope_constants(traj: OdiTrajectory) -> dict[str, float]:
    """Smallest constants with y <= C_y min{1, t} and x <= 1 + C_x t."""
    c_y = _ratio_max(traj.y, np.minimum(1.0, traj.t))
    c_x = _ratio_max(traj.x - 1.0, traj.t)
    return {"C_y": c_y, "C_x": c_x, "C": max(c_y, c_x)}


def forced_envelope_constants(traj: OdiTrajectory) -> dict[str, float]:
    """Smallest constants with x <= 1 + C_x t^2, y <= C_y t, z <= C_z min{1, t}."""
    if traj.z is None:
        raise ValueError("forced constants need a trajectory with z")
    c_x = _ratio_max(traj.x - 1.0, traj.t * traj.t)
    c_y = _ratio_max(traj.y, traj.t)
    c_z = _ratio_max(traj.z, np.minimum(1.0, traj.t))
    return {"C_x": c_x, "C_y": c_y, "C_z": c_z, "C": max(c_x, c_y, c_z)}
