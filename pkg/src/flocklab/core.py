"""Core types: communication kernels, force parameters, particle ensembles,
initial distributions, and reproducible seeding.

Everything downstream (integrators, mean-field flows, chaos estimators) is
built on the frozen dataclasses defined here.  Ensembles own immutable float64
arrays; mutation happens only by constructing new ensembles, which keeps
snapshots safe to retain and makes the integrators referentially transparent.

Seeding uses a counter-based generator (Philox) keyed by a splitmix64-style
hash of ``(master_seed, stream_index)``, so any stream can be reconstructed
in isolation without replaying the streams before it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "KernelSpec",
    "ForceParams",
    "ParticleEnsemble",
    "VelocityBox",
    "VelocityCone",
    "InitialDistribution",
    "kernel_eval",
    "kernel_heavy_tail_check",
    "derive_seed",
    "make_rng",
    "sample_initial",
    "sector_margin",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


# ---------------------------------------------------------------------------
# communication kernel


@dataclass(frozen=True)
class KernelSpec:
    """Distance-weighted communication kernel.

    kind
        ``"power"``: ``lam * (1 + r^2) ** (-beta / 2)``.
        ``"constant"``: ``lam`` everywhere.
        ``"tabulated"``: piecewise-linear interpolation of ``table``,
        clamped to the end values outside the tabulated range.
    lam
        Overall strength; must be positive.
    beta
        Power-law decay exponent; must be >= 0.  Ignored unless
        ``kind == "power"``.
    table
        Sequence of ``(r, value)`` pairs with strictly increasing radii and
        nonnegative values.  Required iff ``kind == "tabulated"``.
    """

    kind: str = "power"
    lam: float = 1.0
    beta: float = 0.0
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("power", "constant", "tabulated"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "tabulated":
            if not self.table:
                raise ValueError("tabulated kernel requires a nonempty table")
            table = tuple((float(r), float(v)) for r, v in self.table)
            radii = [r for r, _ in table]
            if any(r < 0.0 for r in radii):
                raise ValueError("table radii must be nonnegative")
            if any(b <= a for a, b in zip(radii, radii[1:])):
                raise ValueError("table radii must be strictly increasing")
            if any(v < 0.0 for _, v in table):
                raise ValueError("table values must be nonnegative")
            object.__setattr__(self, "table", table)
        else:
            if self.table is not None:
                raise ValueError(f"table is only valid for kind='tabulated'")
            lam = float(self.lam)
            if not math.isfinite(lam) or lam <= 0.0:
                raise ValueError("kernel strength lam must be a positive finite number")
            object.__setattr__(self, "lam", lam)
            beta = float(self.beta)
            if not math.isfinite(beta) or beta < 0.0:
                raise ValueError("kernel exponent beta must be finite and >= 0")
            object.__setattr__(self, "beta", beta)

    def table_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Tabulated radii and values as float64 arrays (empty otherwise)."""
        if self.kind != "tabulated":
            empty = np.empty(0, dtype=np.float64)
            return empty, empty
        pts = np.asarray(self.table, dtype=np.float64)
        return np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1])


def kernel_eval(kernel: KernelSpec, r):
    """Evaluate the kernel at distance(s) ``r`` (scalar or ndarray).

    Raises ``ValueError`` for negative distances.
    """
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr < 0.0):
        raise ValueError("kernel argument r must be nonnegative")
    if kernel.kind == "constant":
        out = np.full_like(arr, kernel.lam)
    elif kernel.kind == "power":
        out = kernel.lam * (1.0 + arr * arr) ** (-0.5 * kernel.beta)
    else:
        radii, values = kernel.table_arrays()
        out = np.interp(arr, radii, values)
    if np.isscalar(r) or arr.ndim == 0:
        return float(out)
    return out


def kernel_heavy_tail_check(kernel: KernelSpec) -> bool:
    """True iff the kernel has a divergent tail integral on [0, inf).

    For the power family this holds exactly when ``beta <= 1``; a constant
    kernel is always heavy-tailed.  Tabulated kernels have compact support
    (clamped to the final value, which is a finite-integral tail only when
    that value is zero), so they are heavy-tailed iff the last value is
    positive.
    """
    if kernel.kind == "constant":
        return True
    if kernel.kind == "power":
        return kernel.beta <= 1.0
    return kernel.table[-1][1] > 0.0


# ---------------------------------------------------------------------------
# force


@dataclass(frozen=True)
class ForceParams:
    """Speed-regulating force ``sigma * v * (theta - |v|^p)`` with a consensus
    channel ``kappa`` on the per-particle preferred speeds ``theta``.

    All of ``sigma``, ``kappa`` must be positive; ``p >= 1``.
    """

    sigma: float
    p: float
    kappa: float

    def __post_init__(self) -> None:
        for name in ("sigma", "p", "kappa"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if self.p < 1.0:
            raise ValueError("speed exponent p must be >= 1")


# ---------------------------------------------------------------------------
# ensembles


def _frozen_array(a, dim: int | None = None) -> np.ndarray:
    out = np.array(a, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ParticleEnsemble:
    """State of ``count`` particles in ``dim`` dimensions at a single time.

    positions, velocities : (count, dim) float64, read-only
    thetas : (count,) float64 with strictly positive entries, or None for the
        forceless model
    time : simulation time of the snapshot
    """

    positions: np.ndarray
    velocities: np.ndarray
    thetas: np.ndarray | None = None
    time: float = 0.0

    def __post_init__(self) -> None:
        x = _frozen_array(self.positions)
        v = _frozen_array(self.velocities)
        if x.ndim != 2 or v.ndim != 2:
            raise ValueError("positions and velocities must be (count, dim) arrays")
        if x.shape != v.shape:
            raise ValueError(
                f"positions shape {x.shape} != velocities shape {v.shape}"
            )
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("ensemble needs at least one particle and one dimension")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("positions and velocities must be finite")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        if self.thetas is not None:
            th = _frozen_array(self.thetas)
            if th.shape != (x.shape[0],):
                raise ValueError("thetas must be a (count,) array")
            if not np.all(np.isfinite(th)) or np.any(th <= 0.0):
                raise ValueError("thetas must be finite and strictly positive")
            object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "time", float(self.time))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def has_thetas(self) -> bool:
        return self.thetas is not None

    def subset(self, n: int) -> "ParticleEnsemble":
        """Ensemble made of the first ``n`` particles."""
        if not (1 <= n <= self.count):
            raise ValueError(f"subset size {n} out of range [1, {self.count}]")
        th = None if self.thetas is None else self.thetas[:n]
        return ParticleEnsemble(self.positions[:n], self.velocities[:n], th, self.time)


# ---------------------------------------------------------------------------
# initial distributions


@dataclass(frozen=True)
class VelocityBox:
    """Uniform velocities on an axis-aligned box (list of (lo, hi) per axis)."""

    box: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) < 1:
            raise ValueError("velocity box needs at least one axis")
        if any(not (math.isfinite(lo) and math.isfinite(hi)) for lo, hi in box):
            raise ValueError("velocity box bounds must be finite")
        if any(hi <= lo for lo, hi in box):
            raise ValueError("velocity box must have positive volume (lo < hi per axis)")
        object.__setattr__(self, "box", box)

    @property
    def dim(self) -> int:
        return len(self.box)


@dataclass(frozen=True)
class VelocityCone:
    """Velocities ``v = s * u`` with ``u`` uniform on the spherical cap
    ``u . axis >= eps`` and speed ``s`` uniform on [speed_min, speed_max].

    ``eps`` in (0, 1]; ``eps == 1`` collapses the cap to the axis direction.
    """

    axis: tuple[float, ...]
    eps: float
    speed_min: float
    speed_max: float

    def __post_init__(self) -> None:
        axis = np.asarray(self.axis, dtype=np.float64)
        if axis.ndim != 1 or axis.shape[0] < 2:
            raise ValueError("cone axis must be a vector of dimension >= 2")
        norm = float(np.linalg.norm(axis))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("cone axis must be nonzero and finite")
        object.__setattr__(self, "axis", tuple(float(a / norm) for a in axis))
        eps = float(self.eps)
        if not (0.0 < eps <= 1.0):
            raise ValueError("cone aperture eps must lie in (0, 1]")
        object.__setattr__(self, "eps", eps)
        smin, smax = float(self.speed_min), float(self.speed_max)
        if not (math.isfinite(smin) and math.isfinite(smax)):
            raise ValueError("cone speeds must be finite")
        if smin <= 0.0 or smax < smin:
            raise ValueError("cone speeds must satisfy 0 < speed_min <= speed_max")
        object.__setattr__(self, "speed_min", smin)
        object.__setattr__(self, "speed_max", smax)

    @property
    def dim(self) -> int:
        return len(self.axis)


@dataclass(frozen=True)
class InitialDistribution:
    """Product law for initial states: uniform positions on a box, a velocity
    region (box or cone), and optionally uniform preferred speeds.

    position_box
        (lo, hi) per axis; must have positive volume.
    velocity_region
        ``VelocityBox`` or ``VelocityCone`` of matching dimension.
    theta_range
        (lo, hi) with 0 < lo < hi, or None for the forceless model.
    """

    position_box: tuple[tuple[float, float], ...]
    velocity_region: VelocityBox | VelocityCone
    theta_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        box = tuple((float(lo), float(hi)) for lo, hi in self.position_box)
        if len(box) < 1:
            raise ValueError("position box needs at least one axis")
        if any(not (math.isfinite(lo) and math.isfinite(hi)) for lo, hi in box):
            raise ValueError("position box bounds must be finite")
        if any(hi <= lo for lo, hi in box):
            raise ValueError("position box must have positive volume (lo < hi per axis)")
        object.__setattr__(self, "position_box", box)
        if self.velocity_region.dim != len(box):
            raise ValueError(
                f"velocity region dimension {self.velocity_region.dim} != "
                f"position dimension {len(box)}"
            )
        if self.theta_range is not None:
            lo, hi = (float(t) for t in self.theta_range)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError("theta range must be finite")
            if not (0.0 < lo < hi):
                raise ValueError("theta range must satisfy 0 < lo < hi")
            object.__setattr__(self, "theta_range", (lo, hi))

    @property
    def dim(self) -> int:
        return len(self.position_box)


# ---------------------------------------------------------------------------
# seeding


def _mix64(v: int) -> int:
    # splitmix64 finalizer
    v &= _MASK64
    v ^= v >> 30
    v = (v * 0xBF58476D1CE4E5B9) & _MASK64
    v ^= v >> 27
    v = (v * 0x94D049BB133111EB) & _MASK64
    v ^= v >> 31
    return v


def derive_seed(master_seed: int, stream_index: int) -> int:
    """Deterministic 64-bit child seed for a named stream.

    ``mix64(master + (stream_index + 1) * golden)`` with the splitmix64
    finalizer; distinct streams decorrelate even for adjacent indices, and a
    stream can be rebuilt without touching any other stream.
    """
    if stream_index < 0:
        raise ValueError("stream_index must be nonnegative")
    return _mix64((int(master_seed) + (stream_index + 1) * _GOLDEN) & _MASK64)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))


# ---------------------------------------------------------------------------
# sampling


def sector_margin(velocities: np.ndarray, axis, eps: float) -> float:
    """min_i ( v_i . axis - eps * |v_i| ): nonnegative iff every velocity lies
    in the closed cone ``v . axis >= eps |v|`` around the unit vector axis."""
    v = np.asarray(velocities, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("velocities must be a (count, dim) array")
    a = np.asarray(axis, dtype=np.float64)
    if a.shape != (v.shape[1],):
        raise ValueError("axis dimension mismatch")
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        raise ValueError("axis must be nonzero")
    a = a / norm
    # keep the exact expression used by cone rejection sampling so freshly
    # sampled cones report margin >= 0.0 bitwise
    return float(np.min(v @ a - eps * np.sqrt(np.sum(v * v, axis=1))))


def _sample_cap(rng: np.random.Generator, n: int, axis: np.ndarray, eps: float,
                dim: int) -> np.ndarray:
    """Unit vectors uniform on the cap u.axis >= eps, by rejection from the
    sphere (isotropic Gaussian direction)."""
    if eps >= 1.0:
        return np.tile(axis, (n, 1))
    out = np.empty((n, dim), dtype=np.float64)
    got = 0
    while got < n:
        batch = max(64, 2 * (n - got))
        g = rng.standard_normal((batch, dim))
        norms = np.sqrt(np.sum(g * g, axis=1))
        ok = norms > 1e-12
        u = g[ok] / norms[ok, None]
        # acceptance predicate matches sector_margin's arithmetic exactly
        accept = u @ axis - eps * np.sqrt(np.sum(u * u, axis=1)) >= 0.0
        u = u[accept]
        take = min(n - got, u.shape[0])
        out[got:got + take] = u[:take]
        got += take
    return out


def sample_initial(dist: InitialDistribution, n: int, seed: int) -> ParticleEnsemble:
    """Draw ``n`` i.i.d. particles from ``dist`` using the stream ``seed``.

    Within one draw the consumption order is fixed (positions, then
    velocities, then thetas), so a given (dist, n, seed) triple is fully
    reproducible.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    rng = make_rng(seed)
    dim = dist.dim
    box = np.asarray(dist.position_box, dtype=np.float64)
    x = rng.uniform(box[:, 0], box[:, 1], size=(n, dim))
    region = dist.velocity_region
    if isinstance(region, VelocityBox):
        vbox = np.asarray(region.box, dtype=np.float64)
        v = rng.uniform(vbox[:, 0], vbox[:, 1], size=(n, dim))
    else:
        axis = np.asarray(region.axis, dtype=np.float64)
        u = _sample_cap(rng, n, axis, region.eps, dim)
        if region.speed_min == region.speed_max:
            speeds = np.full(n, region.speed_min)
        else:
            speeds = rng.uniform(region.speed_min, region.speed_max, size=n)
        v = u * speeds[:, None]
    thetas = None
    if dist.theta_range is not None:
        thetas = rng.uniform(dist.theta_range[0], dist.theta_range[1], size=n)
    return ParticleEnsemble(x, v, thetas, 0.0)
