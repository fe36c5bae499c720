"""Mean-field characteristic flows driven by a reference particle ensemble.

The limiting kinetic equation is never solved on a grid.  Instead its
phase-space density is approximated by the empirical measure of a large
reference ensemble that evolves under its own mutual dynamics, and "tracked"
characteristics are transported by averaging the kernel interaction over that
reference.  Tracked points never feed back on the reference, so they behave
as independent characteristics of the (approximate) mean-field flow.

Both populations advance with synchronized RK4 stages: each tracked stage
derivative is evaluated against the reference's state at the same stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _pairsum
from .core import ForceParams, KernelSpec, ParticleEnsemble
from .dynamics import Derivatives, NumericalBlowupError, cs_rhs, csr_rhs, _shifted, _speed_pow

__all__ = ["MeanFieldSystem", "meanfield_rhs", "advance_coupled_system"]


@dataclass(frozen=True)
class MeanFieldSystem:
    """Tracked characteristics plus the reference ensemble that drives them.

    Invariants: matching dimension and model kind; the reference is at least
    as large as the tracked set (it plays the role of the limit measure, so
    its sampling error should not be the bottleneck).
    """

    tracked: ParticleEnsemble
    reference: ParticleEnsemble
    kernel: KernelSpec
    force: ForceParams | None = None

    def __post_init__(self) -> None:
        if self.tracked.dim != self.reference.dim:
            raise ValueError("tracked and reference dimensions differ")
        if self.tracked.has_thetas != self.reference.has_thetas:
            raise ValueError("tracked and reference must share the model kind")
        if (self.force is not None) != self.tracked.has_thetas:
            raise ValueError("force parameters and thetas must match")
        if self.reference.count < self.tracked.count:
            raise ValueError("reference must be at least as large as tracked")


def meanfield_rhs(
    tracked: ParticleEnsemble,
    reference: ParticleEnsemble,
    kernel: KernelSpec,
    force: ForceParams | None = None,
) -> Derivatives:
    """Derivatives of tracked points under the reference empirical measure.

    For each tracked point: d_x = v, d_v = (1/M) sum_m phi(|x - y_m|)(w_m - v)
    plus the speed-regulating force when present, and the matching
    preferred-speed consensus channel.  Passing the tracked ensemble itself as
    the reference reproduces the self-interacting RHS bitwise.
    """
    if tracked.dim != reference.dim:
        raise ValueError("tracked and reference dimensions differ")
    if tracked.has_thetas != reference.has_thetas:
        raise ValueError("tracked and reference must share the model kind")
    if (force is not None) != tracked.has_thetas:
        raise ValueError("force parameters and thetas must match")
    if tracked is reference:
        # the ensemble's own empirical measure: identical arithmetic path
        if force is None:
            return cs_rhs(tracked, kernel)
        return csr_rhs(tracked, kernel, force)
    if force is None:
        dv = _pairsum.alignment_cross(
            tracked.positions, tracked.velocities, reference.positions,
            reference.velocities, kernel,
        )
        return Derivatives(tracked.velocities, dv)
    dv, dth = _pairsum.alignment_consensus_cross(
        tracked.positions, tracked.velocities, tracked.thetas,
        reference.positions, reference.velocities, reference.thetas, kernel,
    )
    rayleigh = force.sigma * (tracked.thetas - _speed_pow(tracked.velocities, force.p))
    dv = dv + rayleigh[:, None] * tracked.velocities
    return Derivatives(tracked.velocities, dv, force.kappa * dth)


def _joint_derivs(
    states: dict[str, ParticleEnsemble],
    drivers: dict[str, str | None],
    kernel: KernelSpec,
    force: ForceParams | None,
) -> dict[str, Derivatives]:
    out: dict[str, Derivatives] = {}
    for name, ens in states.items():
        drv = drivers[name]
        if drv is None:
            out[name] = cs_rhs(ens, kernel) if force is None else csr_rhs(ens, kernel, force)
        else:
            out[name] = meanfield_rhs(ens, states[drv], kernel, force)
    return out


def joint_rk4_step(
    states: dict[str, ParticleEnsemble],
    drivers: dict[str, str | None],
    kernel: KernelSpec,
    force: ForceParams | None,
    dt: float,
) -> dict[str, ParticleEnsemble]:
    """Advance several populations one RK4 step with shared stage times.

    ``drivers[name]`` is None for a self-interacting population or the name of
    the population whose stage states drive it (evaluated at the same stage,
    never the start-of-step state).  Driver populations must themselves be
    self-interacting, so there is no feedback loop.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    for name, drv in drivers.items():
        if drv is not None and drivers.get(drv) is not None:
            raise ValueError("driver populations must be self-interacting")
    names = list(states)
    t0 = next(iter(states.values())).time
    half = 0.5 * dt
    k1 = _joint_derivs(states, drivers, kernel, force)
    s2 = {nm: _shifted(states[nm], k1[nm], half, t0 + half) for nm in names}
    k2 = _joint_derivs(s2, drivers, kernel, force)
    s3 = {nm: _shifted(states[nm], k2[nm], half, t0 + half) for nm in names}
    k3 = _joint_derivs(s3, drivers, kernel, force)
    s4 = {nm: _shifted(states[nm], k3[nm], dt, t0 + dt) for nm in names}
    k4 = _joint_derivs(s4, drivers, kernel, force)
    sixth = dt / 6.0
    out: dict[str, ParticleEnsemble] = {}
    for nm in names:
        ens = states[nm]
        x = ens.positions + sixth * (
            k1[nm].d_positions + 2.0 * k2[nm].d_positions
            + 2.0 * k3[nm].d_positions + k4[nm].d_positions
        )
        v = ens.velocities + sixth * (
            k1[nm].d_velocities + 2.0 * k2[nm].d_velocities
            + 2.0 * k3[nm].d_velocities + k4[nm].d_velocities
        )
        th = None
        if ens.has_thetas:
            th = ens.thetas + sixth * (
                k1[nm].d_thetas + 2.0 * k2[nm].d_thetas
                + 2.0 * k3[nm].d_thetas + k4[nm].d_thetas
            )
        try:
            out[nm] = ParticleEnsemble(x, v, th, t0 + dt)
        except ValueError as exc:
            raise NumericalBlowupError(t0 + dt, f"{nm}: {exc}") from exc
    return out


def advance_coupled_system(sys: MeanFieldSystem, dt: float) -> MeanFieldSystem:
    """One synchronized RK4 step of the reference and its tracked points."""
    states = {"reference": sys.reference, "tracked": sys.tracked}
    drivers: dict[str, str | None] = {"reference": None, "tracked": "reference"}
    new = joint_rk4_step(states, drivers, sys.kernel, sys.force, dt)
    return MeanFieldSystem(new["tracked"], new["reference"], sys.kernel, sys.force)
