"""Experiment runner: declarative JSON configs, deterministic seeding, and
CSV/JSON artifacts.

Subcommands
-----------
simulate   one trajectory; conservation checks; trajectory.csv
flocking   trajectory + diagnostics time series + decay-envelope checks
chaos      Monte Carlo coupling energies; chaos_aggregate.csv + envelope fit
odi        envelope-system grid; fitted constants + stability checks
oracle     exact W2 between two CSV point files (brute-force cross-check)

Every run writes a config echo with resolved defaults, and every output file
embeds the config hash and master seed.  Outputs are byte-identical for a
fixed config and seed regardless of --threads.  Exit codes: 0 all checks
passed, 1 a check failed, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from io import StringIO
from pathlib import Path

import numpy as np

from .core import (
    ForceParams,
    InitialDistribution,
    KernelSpec,
    VelocityBox,
    VelocityCone,
    derive_seed,
    kernel_eval,
    sample_initial,
)
from .coupling import CouplingConfig, estimate_chaos_energies, marginal_w2_bound
from .diagnostics import envelope_check, fit_decay_rate, flock_diagnostics
from .dynamics import (
    IntegratorConfig,
    NumericalBlowupError,
    integrate,
    trajectory_to_csv,
)
from .odi import (
    forced_envelope_constants,
    forceless_envelope_constants,
    integrate_odi_forced,
    integrate_odi_forceless,
)
from .transport import w2_bruteforce, w2_exact

__all__ = ["main"]

_ENV_OUTPUT_DIR = "FLOCKLAB_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# validation plumbing


class _Validator:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def error(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def require_keys(self, d: dict, path: str, known: set[str]) -> None:
        for key in d:
            if key not in known:
                self.error(f"{path}.{key}" if path else key, "unknown key")

    def number(self, d: dict, path: str, key: str, required: bool = True,
               default=None):
        if key not in d:
            if required:
                self.error(f"{path}.{key}", "missing required field")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.error(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
            return default
        return float(v)

    def integer(self, d: dict, path: str, key: str, required: bool = True,
                default=None, minimum=None):
        if key not in d:
            if required:
                self.error(f"{path}.{key}", "missing required field")
            return default
        label = f"{path}.{key}" if path else key
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.error(label, f"expected an integer, got {type(v).__name__}")
            return default
        if minimum is not None and v < minimum:
            self.error(label, f"must be >= {minimum}")
            return default
        return v

    def interval_list(self, d: dict, path: str, key: str):
        """[[lo, hi], ...] -> tuple of pairs, or None on error/missing."""
        if key not in d:
            return None
        v = d[key]
        ok = isinstance(v, list) and len(v) >= 1 and all(
            isinstance(p, list) and len(p) == 2
            and all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in p)
            for p in v
        )
        if not ok:
            self.error(f"{path}.{key}", "expected a list of [lo, hi] pairs")
            return None
        return tuple((float(lo), float(hi)) for lo, hi in v)


def _build_kernel(v: _Validator, cfg: dict) -> KernelSpec | None:
    block = cfg.get("kernel")
    if block is None:
        v.error("kernel", "missing required block")
        return None
    if not isinstance(block, dict):
        v.error("kernel", "expected an object")
        return None
    v.require_keys(block, "kernel", {"kind", "lambda", "beta", "table"})
    kind = block.get("kind", "power")
    if kind not in ("power", "constant", "tabulated"):
        v.error("kernel.kind", f"unknown kernel kind {kind!r}")
        return None
    try:
        if kind == "tabulated":
            table = block.get("table")
            if not isinstance(table, list):
                v.error("kernel.table", "tabulated kernel requires a table")
                return None
            return KernelSpec(kind="tabulated",
                              table=tuple((float(r), float(val)) for r, val in table))
        lam = v.number(block, "kernel", "lambda", required=False, default=1.0)
        beta = v.number(block, "kernel", "beta", required=False, default=0.0)
        if lam is None or beta is None:
            return None
        return KernelSpec(kind=kind, lam=lam, beta=beta)
    except (ValueError, TypeError) as exc:
        v.error("kernel", str(exc))
        return None


def _build_force(v: _Validator, cfg: dict, model: str) -> ForceParams | None:
    block = cfg.get("force")
    if model == "forceless":
        if block is not None:
            v.error("force", "not allowed for the forceless model")
        return None
    if block is None:
        v.error("force", "required for the forced model")
        return None
    if not isinstance(block, dict):
        v.error("force", "expected an object")
        return None
    v.require_keys(block, "force", {"sigma", "p", "kappa"})
    sigma = v.number(block, "force", "sigma")
    p = v.number(block, "force", "p")
    kappa = v.number(block, "force", "kappa")
    if None in (sigma, p, kappa):
        return None
    try:
        return ForceParams(sigma=sigma, p=p, kappa=kappa)
    except ValueError as exc:
        v.error("force", str(exc))
        return None


def _build_init(v: _Validator, cfg: dict, model: str) -> InitialDistribution | None:
    block = cfg.get("init")
    if block is None:
        v.error("init", "missing required block")
        return None
    if not isinstance(block, dict):
        v.error("init", "expected an object")
        return None
    v.require_keys(block, "init",
                   {"position_box", "velocity_box", "velocity_cone", "theta_range"})
    pos = v.interval_list(block, "init", "position_box")
    if "position_box" not in block:
        v.error("init.position_box", "missing required field")
    has_box = "velocity_box" in block
    has_cone = "velocity_cone" in block
    if has_box == has_cone:
        v.error("init", "exactly one of velocity_box / velocity_cone is required")
        return None
    region = None
    try:
        if has_box:
            vbox = v.interval_list(block, "init", "velocity_box")
            if vbox is not None:
                region = VelocityBox(vbox)
        else:
            cone = block["velocity_cone"]
            if not isinstance(cone, dict):
                v.error("init.velocity_cone", "expected an object")
            else:
                v.require_keys(cone, "init.velocity_cone",
                               {"axis", "eps", "speed_min", "speed_max"})
                axis = cone.get("axis")
                if not (isinstance(axis, list) and len(axis) >= 2):
                    v.error("init.velocity_cone.axis", "expected a vector")
                else:
                    region = VelocityCone(
                        axis=tuple(float(a) for a in axis),
                        eps=v.number(cone, "init.velocity_cone", "eps") or 0.0,
                        speed_min=v.number(cone, "init.velocity_cone", "speed_min") or 0.0,
                        speed_max=v.number(cone, "init.velocity_cone", "speed_max") or 0.0,
                    )
    except (ValueError, TypeError) as exc:
        v.error("init.velocity_cone" if has_cone else "init.velocity_box", str(exc))
        return None
    theta_range = None
    if model == "forced":
        if "theta_range" not in block:
            v.error("init.theta_range", "required for the forced model")
            return None
        tr = block["theta_range"]
        if not (isinstance(tr, list) and len(tr) == 2):
            v.error("init.theta_range", "expected [lo, hi]")
            return None
        theta_range = (float(tr[0]), float(tr[1]))
    elif "theta_range" in block:
        v.error("init.theta_range", "not allowed for the forceless model")
        return None
    if pos is None or region is None:
        return None
    try:
        return InitialDistribution(position_box=pos, velocity_region=region,
                                   theta_range=theta_range)
    except ValueError as exc:
        v.error("init", str(exc))
        return None


def _build_integrator(v: _Validator, cfg: dict) -> IntegratorConfig | None:
    block = cfg.get("integrator")
    if block is None:
        v.error("integrator", "missing required block")
        return None
    if not isinstance(block, dict):
        v.error("integrator", "expected an object")
        return None
    v.require_keys(block, "integrator", {"dt", "t_end", "observer_stride"})
    dt = v.number(block, "integrator", "dt", required=False, default=1e-2)
    t_end = v.number(block, "integrator", "t_end")
    stride = v.integer(block, "integrator", "observer_stride", required=False,
                       default=1, minimum=1)
    if dt is not None and dt <= 0.0:
        v.error("integrator.dt", "must be positive")
        return None
    if t_end is not None and t_end <= 0.0:
        v.error("integrator.t_end", "must be positive")
        return None
    if None in (dt, t_end, stride):
        return None
    try:
        return IntegratorConfig(dt=dt, t_end=t_end, observer_stride=stride)
    except ValueError as exc:
        v.error("integrator", str(exc))
        return None


_TOP_KEYS = {"model", "kernel", "force", "init", "integrator", "simulate",
             "coupling", "odi", "master_seed", "output_dir"}


@dataclass
class _Resolved:
    command: str
    model: str
    kernel: KernelSpec
    force: ForceParams | None
    init: InitialDistribution | None
    integrator: IntegratorConfig | None
    master_seed: int
    output_dir: Path
    n_particles: int | None = None
    coupling: CouplingConfig | None = None
    odi: dict | None = None
    echo: dict | None = None


def _resolve(cfg: dict, command: str, args) -> tuple[_Resolved | None, list[str]]:
    v = _Validator()
    if not isinstance(cfg, dict):
        return None, ["config: expected a top-level object"]
    v.require_keys(cfg, "", _TOP_KEYS)
    model = cfg.get("model", "forceless")
    if model not in ("forceless", "forced"):
        v.error("model", f"expected 'forceless' or 'forced', got {model!r}")
        model = "forceless"
    kernel = _build_kernel(v, cfg)
    force = _build_force(v, cfg, model)
    init = _build_init(v, cfg, model)
    needs_integrator = command in ("simulate", "flocking", "chaos")
    integrator = _build_integrator(v, cfg) if needs_integrator else None
    master_seed = v.integer(cfg, "", "master_seed", required=False, default=0,
                            minimum=0)
    if args.seed is not None:
        master_seed = args.seed

    out_dir = cfg.get("output_dir", "out")
    if not isinstance(out_dir, str):
        v.error("output_dir", "expected a path string")
        out_dir = "out"
    if os.environ.get(_ENV_OUTPUT_DIR):
        out_dir = os.environ[_ENV_OUTPUT_DIR]
    if args.out is not None:
        out_dir = args.out

    res = _Resolved(
        command=command, model=model, kernel=kernel, force=force, init=init,
        integrator=integrator, master_seed=master_seed or 0,
        output_dir=Path(out_dir),
    )

    if command in ("simulate", "flocking"):
        block = cfg.get("simulate")
        if not isinstance(block, dict):
            v.error("simulate", "missing required block")
        else:
            v.require_keys(block, "simulate", {"n_particles"})
            res.n_particles = v.integer(block, "simulate", "n_particles",
                                        minimum=1)
    if command == "chaos":
        block = cfg.get("coupling")
        if not isinstance(block, dict):
            v.error("coupling", "missing required block")
        else:
            v.require_keys(block, "coupling",
                           {"n_particles", "n_reference", "trials", "obs_times"})
            n = v.integer(block, "coupling", "n_particles", minimum=1)
            trials = v.integer(block, "coupling", "trials", required=False,
                               default=100, minimum=1)
            n_ref = v.integer(block, "coupling", "n_reference", required=False,
                              default=None, minimum=1)
            obs = block.get("obs_times")
            if obs is not None and not (
                isinstance(obs, list)
                and all(isinstance(t, (int, float)) and not isinstance(t, bool)
                        for t in obs)
            ):
                v.error("coupling.obs_times", "expected a list of times")
                obs = None
            if not v.errors and None not in (n, trials, kernel, init, integrator):
                try:
                    res.coupling = CouplingConfig(
                        n_particles=n, trials=trials, kernel=kernel, init=init,
                        integrator=integrator, master_seed=res.master_seed,
                        n_reference=n_ref, force=force,
                        obs_times=None if obs is None else tuple(float(t) for t in obs),
                    )
                except ValueError as exc:
                    v.error("coupling", str(exc))
    if command == "odi":
        block = cfg.get("odi", {})
        if not isinstance(block, dict):
            v.error("odi", "expected an object")
            block = {}
        v.require_keys(block, "odi", {"c_values", "delta_values", "t_end", "dt",
                                      "model", "write_trajectories"})
        grid = {}
        for key, default in (("c_values", [0.25, 1.0, 4.0]),
                             ("delta_values", [0.25, 1.0, 4.0])):
            vals = block.get(key, default)
            if not (isinstance(vals, list) and vals and all(
                    isinstance(x, (int, float)) and not isinstance(x, bool)
                    for x in vals)):
                v.error(f"odi.{key}", "expected a nonempty list of numbers")
                vals = default
            grid[key] = [float(x) for x in vals]
        grid["t_end"] = v.number(block, "odi", "t_end", required=False, default=50.0)
        grid["dt"] = v.number(block, "odi", "dt", required=False, default=1e-4)
        omodel = block.get("model", "both")
        if omodel not in ("forceless", "forced", "both"):
            v.error("odi.model", "expected 'forceless', 'forced' or 'both'")
            omodel = "both"
        grid["model"] = omodel
        wt = block.get("write_trajectories", False)
        if not isinstance(wt, bool):
            v.error("odi.write_trajectories", "expected a boolean")
            wt = False
        grid["write_trajectories"] = wt
        res.odi = grid
    if v.errors:
        return None, v.errors
    return res, []


# ---------------------------------------------------------------------------
# output helpers


def _config_hash(echo: dict) -> str:
    return hashlib.sha256(
        json.dumps(echo, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True,
                               default=_json_default) + "\n")


def _kernel_echo(k: KernelSpec) -> dict:
    if k.kind == "tabulated":
        return {"kind": k.kind, "table": [list(rv) for rv in k.table]}
    return {"kind": k.kind, "lambda": k.lam, "beta": k.beta}


def _init_echo(init: InitialDistribution) -> dict:
    d: dict = {"position_box": [list(p) for p in init.position_box]}
    region = init.velocity_region
    if isinstance(region, VelocityBox):
        d["velocity_box"] = [list(p) for p in region.box]
    else:
        d["velocity_cone"] = {
            "axis": list(region.axis), "eps": region.eps,
            "speed_min": region.speed_min, "speed_max": region.speed_max,
        }
    if init.theta_range is not None:
        d["theta_range"] = list(init.theta_range)
    return d


def _echo_dict(res: _Resolved, args) -> dict:
    # threads is deliberately excluded: it must not change any output byte
    echo: dict = {
        "command": res.command,
        "model": res.model,
        "master_seed": res.master_seed,
    }
    if res.kernel is not None:
        echo["kernel"] = _kernel_echo(res.kernel)
    if res.force is not None:
        echo["force"] = {"sigma": res.force.sigma, "p": res.force.p,
                         "kappa": res.force.kappa}
    if res.init is not None:
        echo["init"] = _init_echo(res.init)
    if res.integrator is not None:
        echo["integrator"] = {"dt": res.integrator.dt,
                              "t_end": res.integrator.t_end,
                              "observer_stride": res.integrator.observer_stride}
    if res.n_particles is not None:
        echo["simulate"] = {"n_particles": res.n_particles}
    if res.coupling is not None:
        cc = res.coupling
        echo["coupling"] = {
            "n_particles": cc.n_particles, "n_reference": cc.n_reference,
            "trials": cc.trials, "obs_times": list(cc.obs_times),
            "seed_streams": "trial i: sample=derive_seed(master, 2i), reference=derive_seed(master, 2i+1)",
        }
    if res.odi is not None:
        echo["odi"] = dict(res.odi)
    return echo


def _emit_echo(res: _Resolved, echo: dict, sha: str) -> None:
    doc = dict(echo)
    doc["config_sha256"] = sha
    if res.coupling is not None:
        doc["derived_seeds"] = [
            [derive_seed(res.master_seed, 2 * i),
             derive_seed(res.master_seed, 2 * i + 1)]
            for i in range(res.coupling.trials)
        ]
    _write_json(res.output_dir / "config_echo.json", doc)


def _meta(sha: str, seed: int) -> dict:
    return {"config_sha256": sha, "master_seed": seed}


def _diag_csv(rows, out, header_meta: dict) -> None:
    for key in sorted(header_meta):
        out.write(f"# {key}={header_meta[key]}\n")
    out.write("t,D,A,Q,theta_plus,theta_minus,v_plus,v_minus,"
              "gamma,gamma2d,Rratio,degenerate\n")
    for d in rows:
        out.write(
            f"{d.t:.17g},{d.D:.17g},{d.A:.17g},{d.Q:.17g},{d.theta_plus:.17g},"
            f"{d.theta_minus:.17g},{d.v_plus:.17g},{d.v_minus:.17g},"
            f"{d.gamma:.17g},{d.gamma2d:.17g},{d.Rratio:.17g},{int(d.degenerate)}\n"
        )


# ---------------------------------------------------------------------------
# commands


def _run_trajectory(res: _Resolved):
    ens0 = sample_initial(res.init, res.n_particles,
                          derive_seed(res.master_seed, 0))
    return integrate(ens0, res.kernel, res.force, res.integrator)


def _cmd_simulate(res: _Resolved, echo: dict, sha: str) -> int:
    snapshots = _run_trajectory(res)
    buf = StringIO()
    trajectory_to_csv(snapshots, buf, header_meta=_meta(sha, res.master_seed))
    (res.output_dir / "trajectory.csv").write_text(buf.getvalue())
    first, last = snapshots[0], snapshots[-1]
    checks = {}
    mv0 = first.velocities.mean(axis=0)
    mv1 = last.velocities.mean(axis=0)
    drift = float(np.linalg.norm(mv1 - mv0)) / (1.0 + float(np.linalg.norm(mv0)))
    if res.model == "forceless":
        checks["momentum_drift"] = {"pass": drift <= 1e-10, "value": drift,
                                    "tolerance": 1e-10}
    else:
        th_drift = abs(float(last.thetas.mean()) - float(first.thetas.mean()))
        th_drift /= 1.0 + abs(float(first.thetas.mean()))
        checks["theta_mass_drift"] = {"pass": th_drift <= 1e-10,
                                      "value": th_drift, "tolerance": 1e-10}
    ok = all(c["pass"] for c in checks.values())
    _write_json(res.output_dir / "summary.json", {
        "command": "simulate", "config_sha256": sha,
        "master_seed": res.master_seed, "snapshots": len(snapshots),
        "checks": checks, "pass": ok,
    })
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _positive_series(times, values, floor: float = 1e-14):
    """(t, v) pairs with v above the noise floor, for log fits."""
    pts = [(t, v) for t, v in zip(times, values) if v > floor]
    return pts


def _cmd_flocking(res: _Resolved, echo: dict, sha: str) -> int:
    snapshots = _run_trajectory(res)
    diags = [flock_diagnostics(s) for s in snapshots]
    buf = StringIO()
    _diag_csv(diags, buf, _meta(sha, res.master_seed))
    (res.output_dir / "diagnostics.csv").write_text(buf.getvalue())
    tbuf = StringIO()
    trajectory_to_csv(snapshots, tbuf, header_meta=_meta(sha, res.master_seed))
    (res.output_dir / "trajectory.csv").write_text(tbuf.getvalue())

    d_obs = max(d.D for d in diags)
    phi_obs = kernel_eval(res.kernel, d_obs)
    times = [d.t for d in diags]
    checks: dict = {}
    if res.model == "forceless":
        a0 = diags[0].A
        worst = max(d.A - (a0 * math.exp(-d.t * phi_obs) + 1e-6) for d in diags)
        checks["velocity_diameter_envelope"] = {
            "pass": worst <= 0.0, "worst_excess": worst, "phi_d_obs": phi_obs,
        }
        series = _positive_series(times, [d.A for d in diags])
        if len(series) >= 5:
            fit = fit_decay_rate(series, t_min=0.0)
            checks["decay_rate"] = {
                "pass": fit.delta_hat >= 0.9 * phi_obs,
                "delta_hat": fit.delta_hat, "required": 0.9 * phi_obs,
            }
        else:
            checks["decay_rate"] = {"pass": True, "note": "series at noise floor"}
    else:
        q0 = diags[0].Q
        kappa = res.force.kappa
        rate = kappa * phi_obs
        worst = max(d.Q - (q0 * math.exp(-d.t * rate) + 1e-6) for d in diags)
        checks["theta_diameter_envelope"] = {
            "pass": worst <= 0.0, "worst_excess": worst,
            "rate": rate, "phi_d_obs": phi_obs,
        }
        rr = _positive_series(times, [d.Rratio - 1.0 for d in diags])
        cg = _positive_series(times, [1.0 - math.cos(d.gamma2d) for d in diags])
        for name, series in (("speed_ratio_decay", rr), ("angle_decay", cg)):
            if len(series) >= 5:
                fit = fit_decay_rate(series, t_min=0.0)
                checks[name] = {"pass": fit.delta_hat > 0.0,
                                "delta_hat": fit.delta_hat}
            else:
                checks[name] = {"pass": True, "note": "series at noise floor"}
        last = snapshots[-1]
        speeds = np.sqrt(np.einsum("ij,ij->i", last.velocities, last.velocities))
        resid = float(np.mean(np.abs(speeds ** res.force.p - last.thetas)))
        checks["terminal_speed_theta"] = {"pass": resid <= 1e-3, "value": resid,
                                          "tolerance": 1e-3}
    ok = all(c["pass"] for c in checks.values())
    _write_json(res.output_dir / "summary.json", {
        "command": "flocking", "config_sha256": sha,
        "master_seed": res.master_seed, "D_obs": d_obs, "phi_D_obs": phi_obs,
        "checks": checks, "pass": ok,
    })
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_chaos(res: _Resolved, echo: dict, sha: str, threads: int) -> int:
    agg = estimate_chaos_energies(res.coupling, threads=threads)
    buf = StringIO()
    agg.to_csv(buf, header_meta=_meta(sha, res.master_seed))
    (res.output_dir / "chaos_aggregate.csv").write_text(buf.getvalue())
    bound = marginal_w2_bound(agg, 1, res.coupling.n_particles)
    form = "lin_min" if res.model == "forceless" else "quad_min"
    fit = envelope_check(
        list(zip(agg.times, bound)), form,
        {"n_particles": res.coupling.n_particles},
    )
    checks = {
        "envelope_constant_finite": {
            "pass": math.isfinite(fit.C_hat), "form": form, "C_hat": fit.C_hat,
        }
    }
    ok = all(c["pass"] for c in checks.values())
    summary = {
        "command": "chaos", "config_sha256": sha,
        "master_seed": res.master_seed,
        "trials": agg.trials, "failed_trials": agg.failed_trials,
        "partial": agg.partial,
        "marginal_w2_bound_k1": {f"{t:.17g}": float(b)
                                 for t, b in zip(agg.times, bound)},
        "envelope": {"form": form, "C_hat": fit.C_hat},
        "checks": checks, "pass": ok and not agg.partial,
    }
    if agg.partial:
        summary["failed_trial_seeds"] = [
            {"trial": i,
             "sample_seed": derive_seed(res.master_seed, 2 * i),
             "reference_seed": derive_seed(res.master_seed, 2 * i + 1)}
            for i in agg.failed_indices
        ]
    _write_json(res.output_dir / "summary.json", summary)
    if agg.partial:
        return EXIT_NUMERICAL
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_odi(res: _Resolved, echo: dict, sha: str) -> int:
    grid = res.odi
    t_end, dt = grid["t_end"], grid["dt"]
    models = ["forceless", "forced"] if grid["model"] == "both" else [grid["model"]]
    results = []
    all_pass = True
    for model in models:
        run = integrate_odi_forceless if model == "forceless" else integrate_odi_forced
        fit = (forceless_envelope_constants if model == "forceless"
               else forced_envelope_constants)
        for c in grid["c_values"]:
            for delta in grid["delta_values"]:
                traj = run(c, delta, t_end, dt)
                consts = fit(traj)
                traj2 = run(c, delta, 2.0 * t_end, dt)
                consts2 = fit(traj2)
                stable = all(
                    consts2[key] <= 2.0 * consts[key] + 1e-12
                    for key in consts
                )
                finite = all(math.isfinite(val) for val in consts.values())
                all_pass &= stable and finite
                entry = {
                    "model": model, "c": c, "delta": delta,
                    "constants": consts, "constants_doubled_horizon": consts2,
                    "finite": finite, "stable_2x": stable,
                }
                results.append(entry)
                if grid["write_trajectories"]:
                    name = f"odi_{model}_c{c:g}_delta{delta:g}.csv"
                    with open(res.output_dir / name, "w") as fh:
                        for key, val in sorted(_meta(sha, res.master_seed).items()):
                            fh.write(f"# {key}={val}\n")
                        fh.write("t,x,y,z\n")
                        z = traj.z
                        for i in range(len(traj)):
                            zv = "" if z is None else f"{z[i]:.17g}"
                            fh.write(f"{traj.t[i]:.17g},{traj.x[i]:.17g},"
                                     f"{traj.y[i]:.17g},{zv}\n")
    _write_json(res.output_dir / "odi_constants.json", {
        "config_sha256": sha, "master_seed": res.master_seed,
        "t_end": t_end, "dt": dt, "results": results,
    })
    _write_json(res.output_dir / "summary.json", {
        "command": "odi", "config_sha256": sha,
        "master_seed": res.master_seed,
        "checks": {"bounds_finite_and_stable": {"pass": all_pass}},
        "pass": all_pass,
    })
    return EXIT_OK if all_pass else EXIT_CHECK_FAILED


def _cmd_oracle(args) -> int:
    try:
        mu = np.loadtxt(args.mu, delimiter=",", comments="#", ndmin=2)
        nu = np.loadtxt(args.nu, delimiter=",", comments="#", ndmin=2)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        dist = w2_exact(mu, nu)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    print(f"w2 {dist:.17g}")
    if mu.shape[0] <= 8:
        ref = w2_bruteforce(mu, nu)
        match = abs(dist - ref) <= 1e-10
        print(f"bruteforce {ref:.17g} match={'yes' if match else 'no'}")
        if not match:
            return EXIT_CHECK_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to a JSON experiment config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master_seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker pool cap (results are independent of it)")
    p.add_argument("--out", default=None, help="override the output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flocklab",
        description="alignment-dynamics experiments: simulation, mean-field "
                    "coupling, flocking diagnostics, envelope systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "flocking", "chaos", "odi"):
        _add_common(sub.add_parser(name))
    oracle = sub.add_parser("oracle", help="exact W2 between two CSV point files")
    oracle.add_argument("mu")
    oracle.add_argument("nu")
    args = parser.parse_args(argv)

    if args.command == "oracle":
        return _cmd_oracle(args)

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    res, errors = _resolve(cfg, args.command, args)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    res.output_dir.mkdir(parents=True, exist_ok=True)
    echo = _echo_dict(res, args)
    sha = _config_hash(echo)
    _emit_echo(res, echo, sha)

    try:
        if args.command == "simulate":
            return _cmd_simulate(res, echo, sha)
        if args.command == "flocking":
            return _cmd_flocking(res, echo, sha)
        if args.command == "chaos":
            return _cmd_chaos(res, echo, sha, args.threads)
        if args.command == "odi":
            return _cmd_odi(res, echo, sha)
    except NumericalBlowupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_json(res.output_dir / "summary.json", {
            "command": args.command, "config_sha256": sha,
            "master_seed": res.master_seed,
            "error": str(exc), "pass": False,
        })
        return EXIT_NUMERICAL
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
