"""Right-hand sides and fixed-step integration for the interacting N-particle
alignment systems.

Two models share one integrator: the plain alignment model (velocities relax
toward kernel-weighted averages) and the forced model, which adds a
speed-regulating force ``sigma * v * (theta - |v|^p)`` plus a consensus
channel on the per-particle preferred speeds theta.  Integration is classical
RK4 with a fixed step; the last step is shortened to land exactly on t_end.
Fixed steps and fixed summation order keep trajectories bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from . import _pairsum
from .core import ForceParams, KernelSpec, ParticleEnsemble

__all__ = [
    "Derivatives",
    "IntegratorConfig",
    "NumericalBlowupError",
    "cs_rhs",
    "csr_rhs",
    "rk4_step",
    "integrate",
    "trajectory_to_csv",
]


class NumericalBlowupError(RuntimeError):
    """Raised when integration produces non-finite state; carries the time."""

    def __init__(self, time: float, detail: str = ""):
        self.time = float(time)
        msg = f"numerical blowup at t={time:g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class Derivatives:
    """Time derivatives matching a ParticleEnsemble's shape."""

    d_positions: np.ndarray
    d_velocities: np.ndarray
    d_thetas: np.ndarray | None = None


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_end: float
    observer_stride: int = 1

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError("dt must be positive and finite")
        if not (math.isfinite(self.t_end) and self.t_end > 0.0):
            raise ValueError("t_end must be positive and finite")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if int(self.observer_stride) != self.observer_stride or self.observer_stride < 1:
            raise ValueError("observer_stride must be a positive integer")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "observer_stride", int(self.observer_stride))


def cs_rhs(ens: ParticleEnsemble, kernel: KernelSpec) -> Derivatives:
    """Alignment dynamics: d_x = v, d_v_i = (1/N) sum_j phi(|x_i-x_j|)(v_j-v_i).

    The pairwise term is antisymmetric, so the velocity derivatives sum to
    zero across particles up to rounding.
    """
    if ens.has_thetas:
        raise ValueError("cs_rhs is the forceless model; ensemble has thetas")
    dv = _pairsum.alignment_self(ens.positions, ens.velocities, kernel)
    return Derivatives(ens.velocities, dv)


def _speed_pow(v: np.ndarray, p: float) -> np.ndarray:
    s2 = np.einsum("ij,ij->i", v, v)
    if p == 2.0:
        return s2
    return s2 ** (0.5 * p)


def csr_rhs(ens: ParticleEnsemble, kernel: KernelSpec, force: ForceParams) -> Derivatives:
    """Forced dynamics: alignment plus ``sigma * v_i * (theta_i - |v_i|^p)``
    and the preferred-speed consensus d_theta_i = (kappa/N) sum phi (th_j - th_i)."""
    if not ens.has_thetas:
        raise ValueError("csr_rhs requires an ensemble with thetas")
    dv, dth = _pairsum.alignment_consensus_self(
        ens.positions, ens.velocities, ens.thetas, kernel
    )
    rayleigh = force.sigma * (ens.thetas - _speed_pow(ens.velocities, force.p))
    dv = dv + rayleigh[:, None] * ens.velocities
    return Derivatives(ens.velocities, dv, force.kappa * dth)


RhsFn = Callable[[ParticleEnsemble], Derivatives]


def _shifted(ens: ParticleEnsemble, deriv: Derivatives, h: float, t: float) -> ParticleEnsemble:
    x = ens.positions + h * deriv.d_positions
    v = ens.velocities + h * deriv.d_velocities
    th = None
    if ens.has_thetas:
        th = ens.thetas + h * deriv.d_thetas
    try:
        return ParticleEnsemble(x, v, th, t)
    except ValueError as exc:
        raise NumericalBlowupError(t, str(exc)) from exc


def rk4_step(ens: ParticleEnsemble, rhs: RhsFn, dt: float) -> ParticleEnsemble:
    """One classical Runge-Kutta step of size dt.

    Every stage RHS sums to zero over particles in the velocity (and theta)
    channel for the self-interacting models, so ensemble means are conserved
    to rounding.
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError("dt must be positive and finite")
    t0 = ens.time
    half = 0.5 * dt
    k1 = rhs(ens)
    k2 = rhs(_shifted(ens, k1, half, t0 + half))
    k3 = rhs(_shifted(ens, k2, half, t0 + half))
    k4 = rhs(_shifted(ens, k3, dt, t0 + dt))
    sixth = dt / 6.0
    x = ens.positions + sixth * (
        k1.d_positions + 2.0 * k2.d_positions + 2.0 * k3.d_positions + k4.d_positions
    )
    v = ens.velocities + sixth * (
        k1.d_velocities + 2.0 * k2.d_velocities + 2.0 * k3.d_velocities + k4.d_velocities
    )
    th = None
    if ens.has_thetas:
        th = ens.thetas + sixth * (
            k1.d_thetas + 2.0 * k2.d_thetas + 2.0 * k3.d_thetas + k4.d_thetas
        )
    try:
        return ParticleEnsemble(x, v, th, t0 + dt)
    except ValueError as exc:
        raise NumericalBlowupError(t0 + dt, str(exc)) from exc


def _step_plan(dt: float, t_end: float) -> tuple[int, float]:
    """Number of full steps and the final short-step size (0 if none)."""
    n_full = int(math.floor(t_end / dt + 1e-9))
    rem = t_end - n_full * dt
    if rem <= dt * 1e-9:
        rem = 0.0
    return n_full, rem


def integrate(
    ens: ParticleEnsemble,
    kernel: KernelSpec,
    force: ForceParams | None,
    cfg: IntegratorConfig,
    observers: Iterable[Callable[[ParticleEnsemble], None]] = (),
) -> list[ParticleEnsemble]:
    """Evolve ``ens`` to cfg.t_end, recording every observer_stride-th step.

    Returns the recorded snapshots (initial state first, final state last).
    Observer callbacks run on every recorded snapshot.
    """
    if (force is not None) != ens.has_thetas:
        raise ValueError("force parameters and ensemble thetas must match")
    if force is None:
        rhs: RhsFn = lambda e: cs_rhs(e, kernel)
    else:
        rhs = lambda e: csr_rhs(e, kernel, force)
    observers = tuple(observers)

    def record(snapshot: ParticleEnsemble) -> None:
        snapshots.append(snapshot)
        for obs in observers:
            obs(snapshot)

    snapshots: list[ParticleEnsemble] = []
    record(ens)
    n_full, rem = _step_plan(cfg.dt, cfg.t_end)
    state = ens
    for k in range(1, n_full + 1):
        state = rk4_step(state, rhs, cfg.dt)
        if k % cfg.observer_stride == 0 and not (k == n_full and rem == 0.0):
            record(state)
    if rem > 0.0:
        state = rk4_step(state, rhs, rem)
    record(state)
    return snapshots


def trajectory_to_csv(
    snapshots: Sequence[ParticleEnsemble],
    out: TextIO,
    population: str | None = None,
    header_meta: dict | None = None,
) -> None:
    """Write snapshots as CSV: one row per particle per snapshot.

    Columns: t, id, x0..x{n-1}, v0..v{n-1}[, theta][, population].  Floats are
    written with 17 significant digits so files round-trip bit-exactly.
    Provenance key-value pairs go into leading ``#`` comment lines.
    """
    if not snapshots:
        raise ValueError("no snapshots to write")
    first = snapshots[0]
    dim = first.dim
    forced = first.has_thetas
    if header_meta:
        for key in sorted(header_meta):
            out.write(f"# {key}={header_meta[key]}\n")
    cols = ["t", "id"]
    cols += [f"x{d}" for d in range(dim)]
    cols += [f"v{d}" for d in range(dim)]
    if forced:
        cols.append("theta")
    if population is not None:
        cols.append("population")
    out.write(",".join(cols) + "\n")
    for snap in snapshots:
        for i in range(snap.count):
            row = [f"{snap.time:.17g}", str(i)]
            row += [f"{snap.positions[i, d]:.17g}" for d in range(dim)]
            row += [f"{snap.velocities[i, d]:.17g}" for d in range(dim)]
            if forced:
                row.append(f"{snap.thetas[i]:.17g}")
            if population is not None:
                row.append(population)
            out.write(",".join(row) + "\n")
