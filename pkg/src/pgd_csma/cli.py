"""Experiment driver: config-file subcommands over the library modules.

Configs are JSON objects validated against each command's schema; unknown
keys are rejected so a typo cannot silently fall back to a default.
Every output file embeds the fully resolved config (defaults substituted
and listed under ``defaulted_keys``) plus the RNG algorithm name, so a
run can always be reproduced from any one of its artifacts.  Identical
config and seeds give byte-identical outputs.

Exit codes: 0 success, 2 configuration error, 3 model assumptions not
met, 4 state space too large to enumerate.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    ExplicitRule,
    FugacityVector,
    IntentRule,
    check_irreducible,
    detailed_balance_residual,
    link_inclusion_probabilities,
    matrix_stationary,
    product_form_stationary,
    transition_matrix,
)
from .errors import (
    ConfigError,
    DimensionError,
    EnumerationLimitError,
    GraphParseError,
    HorizonError,
    InapplicableError,
    ParameterError,
)
from .fugacity import (
    capacity_check,
    fixed_point_fugacities,
    fugacity_bounds_report,
    service_rates,
    solve_fugacities,
)
from .graph import InterferenceGraph, Schedule, enumerate_feasible, load_graph_file
from .mixing import (
    MIXING_THRESHOLD,
    best_bound_tmix,
    coalescence_estimate,
    complete_graph_bound,
    standard_weight_bounds,
    tv_distance,
)
from .queueing import (
    adaptive_equilibrium_queue,
    adaptive_params,
    default_warmup,
    per_queue_bound,
    simulate_adaptive,
    simulate_fixed,
    stability_diagnostic,
)
from .rng import GENERATOR_NAME, SimStreams, make_stream

_BUILTIN_RE = re.compile(r"^(path|star|complete)_(\d+)$")
_ERDOS_RE = re.compile(r"^erdos_(\d+)_(\d*\.?\d+)$")

# Exact TV curves cost O(K^3) per step; stop once the curve hits the
# numerical floor instead of grinding to the horizon.
_TV_FLOOR = 1e-12

_MISSING = object()


class _Config:
    """Raw config dict plus bookkeeping of consumed keys and defaults."""

    def __init__(self, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a JSON object")
        self.raw = raw
        self.seen: set[str] = set()
        self.defaulted: list[str] = []

    def has(self, key: str) -> bool:
        return key in self.raw

    def take(self, key: str, default=_MISSING):
        self.seen.add(key)
        if key in self.raw:
            return self.raw[key]
        if default is _MISSING:
            raise ConfigError(f"missing required config key {key!r}")
        self.defaulted.append(key)
        return default

    def finish(self) -> None:
        unknown = sorted(set(self.raw) - self.seen)
        if unknown:
            raise ConfigError("unknown config keys: " + ", ".join(unknown))


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: " + ", ".join(unknown))


def _py(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _rates(val, n: int, key: str) -> np.ndarray:
    if isinstance(val, bool):
        raise ConfigError(f"{key} must be a number or a list of numbers")
    if isinstance(val, (int, float)):
        return np.full(n, float(val))
    if isinstance(val, list):
        if len(val) != n:
            raise ConfigError(f"{key} needs {n} entries, got {len(val)}")
        try:
            return np.array([float(x) for x in val], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} entries must be numbers") from None
    raise ConfigError(f"{key} must be a number or a list of numbers")


def _resolve_graph(cfg: _Config):
    val = cfg.take("graph")
    if isinstance(val, str):
        val = {"builtin": val}
    if not isinstance(val, dict):
        raise ConfigError("graph must be an object with 'file' or 'builtin'")
    _check_keys(val, {"file", "builtin", "graph_seed"}, "graph")
    if ("file" in val) == ("builtin" in val):
        raise ConfigError("graph needs exactly one of 'file' or 'builtin'")
    if "file" in val:
        if "graph_seed" in val:
            raise ConfigError("graph_seed only applies to erdos builtins")
        g = load_graph_file(val["file"])
        return g, {"file": val["file"]}
    name = val["builtin"]
    m = _BUILTIN_RE.match(name)
    if m:
        if "graph_seed" in val:
            raise ConfigError("graph_seed only applies to erdos builtins")
        g = getattr(InterferenceGraph, m.group(1))(int(m.group(2)))
        return g, {"builtin": name}
    m = _ERDOS_RE.match(name)
    if m:
        if "graph_seed" not in val:
            raise ConfigError(f"builtin {name!r} requires graph_seed")
        seed = val["graph_seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("graph_seed must be an integer")
        g = InterferenceGraph.erdos_renyi(int(m.group(1)), float(m.group(2)), seed)
        return g, {"builtin": name, "graph_seed": seed}
    raise ConfigError(
        f"unknown builtin graph {name!r}; expected path_N, star_N, complete_N, "
        "or erdos_N_P (with graph_seed)"
    )


def _resolve_rule(cfg: _Config, g: InterferenceGraph):
    val = cfg.take("rule", {"kind": "intent", "a": 0.5})
    if not isinstance(val, dict):
        raise ConfigError("rule must be an object with a 'kind'")
    kind = val.get("kind")
    if kind == "intent":
        _check_keys(val, {"kind", "a"}, "rule")
        a = val.get("a", 0.5)
        a_arr = _rates(a, g.n, "rule.a")
        rule = IntentRule(a_arr)
        resolved = {"kind": "intent", "a": a_arr.tolist()}
        if "a" not in val:
            cfg.defaulted.append("rule.a")
    elif kind == "explicit":
        _check_keys(val, {"kind", "schedules", "probs"}, "rule")
        try:
            schedules = list(val["schedules"])
            probs = list(val["probs"])
        except KeyError as e:
            raise ConfigError(f"explicit rule requires {e.args[0]!r}") from None
        masks = []
        for links in schedules:
            if not isinstance(links, list):
                raise ConfigError("rule.schedules must be lists of link indices")
            masks.append(Schedule.from_members(g.n, links).mask)
        rule = ExplicitRule(tuple(masks), np.array(probs, dtype=float))
        rule.validate_for(g)
        resolved = {"kind": "explicit", "schedules": schedules, "probs": probs}
    else:
        raise ConfigError("rule.kind must be 'intent' or 'explicit'")
    return rule, resolved


def _resolve_seeds(cfg: _Config) -> list[int]:
    seeds = cfg.take("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a nonempty list of integers")
    for s in seeds:
        if not isinstance(s, int) or isinstance(s, bool):
            raise ConfigError("seeds must be a nonempty list of integers")
    return seeds


def _resolve_fugacities(cfg: _Config, g: InterferenceGraph, space):
    """Exactly one of lambda (direct) or nu (target rates, solved)."""
    if cfg.has("lambda") == cfg.has("nu"):
        raise ConfigError(
            "exactly one of 'lambda' (fugacities) or 'nu' (target rates "
            "to solve for) is required"
        )
    if cfg.has("lambda"):
        lam = _rates(cfg.take("lambda"), g.n, "lambda")
        fug = FugacityVector(lam)
        return fug, {"lambda": lam.tolist()}
    nu = _rates(cfg.take("nu"), g.n, "nu")
    sol = solve_fugacities(space, nu)
    return sol.fug, {"nu": nu.tolist(), "lambda_solved": sol.fug.values.tolist()}


def _write_report(path: Path, command: str, resolved: dict, results: dict) -> None:
    doc = {
        "command": command,
        "package_version": __version__,
        "generator": GENERATOR_NAME,
        "config": _py(resolved),
        "results": _py(results),
    }
    with open(path, "w", encoding="utf-8", newline="") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def _cell(c):
    if isinstance(c, bool) or isinstance(c, np.bool_):
        return "true" if c else "false"
    if isinstance(c, (float, np.floating)):
        return repr(float(c))
    if isinstance(c, np.integer):
        return int(c)
    return c


def _write_csv(path: Path, resolved: dict, header: list[str], rows) -> None:
    cfg_line = json.dumps(_py(resolved), sort_keys=True, separators=(",", ":"))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# config: {cfg_line}\r\n")
        w = csv.writer(f, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(c) for c in row])


def _stability_dict(report) -> dict:
    return {
        "slope": report.slope,
        "ci_low": report.ci_low,
        "ci_high": report.ci_high,
        "stable": report.stable,
        "windows": report.windows,
        "proxy": report.proxy,
    }


def cmd_stationary(cfg: _Config, out_dir: Path) -> None:
    g, graph_res = _resolve_graph(cfg)
    rule, rule_res = _resolve_rule(cfg, g)
    seeds = _resolve_seeds(cfg)
    space = enumerate_feasible(g)
    fug, fug_res = _resolve_fugacities(cfg, g, space)
    cfg.finish()

    q = link_inclusion_probabilities(g, rule)
    if not check_irreducible(g, rule):
        dead = ", ".join(f"q_{v} = 0" for v in range(g.n) if q[v] == 0.0)
        raise InapplicableError(
            f"chain is not irreducible: {dead}; every link needs positive "
            "decision-schedule probability"
        )
    P = transition_matrix(g, space, fug, rule)
    pi_prod = product_form_stationary(space, fug)
    pi_mat = matrix_stationary(P)

    resolved = {
        "graph": graph_res, "rule": rule_res, "seeds": seeds, **fug_res,
        "defaulted_keys": sorted(cfg.defaulted),
    }
    results = {
        "space_size": space.size,
        "irreducible": True,
        "link_inclusion_probabilities": q,
        "tv_product_vs_matrix": tv_distance(pi_prod, pi_mat),
        "detailed_balance_residual": detailed_balance_residual(pi_prod, P),
    }
    _write_report(out_dir / "stationary_report.json", "stationary", resolved, results)
    rows = []
    for i, mask in enumerate(space.masks):
        s = Schedule(space.n, mask)
        rows.append((i, mask, " ".join(map(str, s.members)),
                     pi_prod[i], pi_mat[i]))
    _write_csv(out_dir / "stationary.csv", resolved,
               ["index", "mask", "members", "pi_product", "pi_matrix"], rows)
    print(f"stationary: {space.size} schedules, "
          f"TV(product, matrix) = {results['tv_product_vs_matrix']:.3g}, "
          f"detailed-balance residual = {results['detailed_balance_residual']:.3g}")


def _bound_dict(rep) -> dict:
    return {
        "theta": rep.theta,
        "w_min": rep.w_min,
        "w_max": rep.w_max,
        "prefactor": rep.prefactor,
        "beta": rep.beta,
        "bound_tmix": rep.bound_tmix,
        "applicable": rep.applicable,
        "condition": rep.condition,
        "condition_holds": rep.condition_holds,
        "extra": dict(rep.extra),
    }


def cmd_mixing(cfg: _Config, out_dir: Path) -> None:
    g, graph_res = _resolve_graph(cfg)
    rule, rule_res = _resolve_rule(cfg, g)
    seeds = _resolve_seeds(cfg)
    mode = cfg.take("mode", "exact")
    horizon = cfg.take("horizon", 10_000)
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon must be a positive integer")

    if mode == "exact":
        space = enumerate_feasible(g)
        fug, fug_res = _resolve_fugacities(cfg, g, space)
        cfg.finish()
        resolved = {
            "graph": graph_res, "rule": rule_res, "seeds": seeds,
            "mode": mode, "horizon": horizon, **fug_res,
            "defaulted_keys": sorted(cfg.defaulted),
        }
        _mixing_exact(g, space, fug, rule, horizon, resolved, out_dir)
    elif mode == "coalescence":
        trials = cfg.take("trials", 100)
        if not isinstance(trials, int) or trials < 1:
            raise ConfigError("trials must be a positive integer")
        if cfg.has("nu"):
            space = enumerate_feasible(g)
        else:
            space = None
        fug, fug_res = _resolve_fugacities(cfg, g, space)
        cfg.finish()
        resolved = {
            "graph": graph_res, "rule": rule_res, "seeds": seeds,
            "mode": mode, "horizon": horizon, "trials": trials, **fug_res,
            "defaulted_keys": sorted(cfg.defaulted),
        }
        _mixing_coalescence(g, fug, rule, trials, horizon, seeds, resolved, out_dir)
    else:
        raise ConfigError("mode must be 'exact' or 'coalescence'")


_MAX_EXACT_CURVE = 4096


def _mixing_exact(g, space, fug, rule, horizon, resolved, out_dir) -> None:
    if space.size > _MAX_EXACT_CURVE:
        raise ParameterError(
            f"exact TV curves are limited to {_MAX_EXACT_CURVE} schedules "
            f"(this instance has {space.size}); use mode 'coalescence'"
        )
    P = transition_matrix(g, space, fug, rule)
    pi = product_form_stationary(space, fug)
    bounds = standard_weight_bounds(g, fug, rule)
    complete_rep = complete_graph_bound(g, fug) if g.is_complete() else None

    # Worst-start TV curve; each step advances every start at once.
    names = list(bounds)
    mu = np.eye(space.size)
    curve_rows = []
    tvs = []
    for t in range(horizon + 1):
        tv = float(np.max(0.5 * np.abs(mu - pi).sum(axis=1)))
        tvs.append(tv)
        row = [t, tv]
        for name in names:
            rep = bounds[name]
            row.append(float(rep.envelope(t)[()]) if rep.applicable else "N/A")
        if complete_rep is not None:
            row.append(float(complete_rep.envelope(t)[()]))
        curve_rows.append(row)
        if tv <= _TV_FLOOR:
            break
        if t < horizon:
            mu = mu @ P

    below = [t for t, tv in enumerate(tvs) if tv <= MIXING_THRESHOLD]
    empirical = below[0] if below else None
    horizon_exhausted = empirical is None

    results = {
        "space_size": space.size,
        "empirical_tmix": empirical,
        "mixing_threshold": MIXING_THRESHOLD,
        "horizon_exhausted": horizon_exhausted,
        "last_worst_tv": tvs[-1],
        "curve_points": len(curve_rows),
        "bounds": {name: _bound_dict(rep) for name, rep in bounds.items()},
        "best_bound_tmix": best_bound_tmix(g, fug, rule),
    }
    if complete_rep is not None:
        results["complete_graph_bound"] = _bound_dict(complete_rep)
    _write_report(out_dir / "mixing_report.json", "mixing", resolved, results)
    header = ["t", "tv"] + [f"envelope_{name}" for name in names]
    if complete_rep is not None:
        header.append("envelope_complete")
    _write_csv(out_dir / "tv_curve.csv", resolved, header, curve_rows)
    if horizon_exhausted:
        print(f"mixing: threshold {MIXING_THRESHOLD:.4g} not reached within "
              f"{horizon} slots (worst-start TV {tvs[-1]:.3g})")
    else:
        print(f"mixing: empirical mixing time {empirical}, "
              f"best analytic bound {results['best_bound_tmix']}")


def _mixing_coalescence(g, fug, rule, trials, horizon, seeds, resolved, out_dir) -> None:
    per_seed = []
    rows = []
    for replica, seed in enumerate(seeds):
        rng = make_stream(seed, replica, "coins")
        res = coalescence_estimate(g, fug, rule, trials, horizon, rng)
        per_seed.append({
            "seed": seed,
            "trials": res.trials,
            "uncoalesced": res.uncoalesced,
            "fraction_uncoalesced": res.fraction_uncoalesced,
            "median_slots": res.median,
            "mean_slots": res.mean,
        })
        for k, slots in enumerate(res.times):
            rows.append((seed, k, int(slots)))
    results = {"horizon": horizon, "per_seed": per_seed}
    _write_report(out_dir / "mixing_report.json", "mixing", resolved, results)
    _write_csv(out_dir / "coalescence.csv", resolved,
               ["seed", "sample", "slots"], rows)
    worst = max(p["fraction_uncoalesced"] for p in per_seed)
    print(f"mixing (coalescence): {len(seeds)} seed(s) x {trials} trials, "
          f"max uncoalesced fraction {worst:.3g}")


def cmd_fugacity(cfg: _Config, out_dir: Path) -> None:
    g, graph_res = _resolve_graph(cfg)
    seeds = _resolve_seeds(cfg)
    nu = _rates(cfg.take("nu"), g.n, "nu")
    rho = cfg.take("rho", 1.0)
    if isinstance(rho, bool) or not isinstance(rho, (int, float)) or not 0 < rho <= 1:
        raise ConfigError("rho must be a number in (0, 1]")
    nu_min = cfg.take("nu_min", None)
    if nu_min is not None and (
        isinstance(nu_min, bool) or not isinstance(nu_min, (int, float))
    ):
        raise ConfigError("nu_min must be a number")
    cfg.finish()

    space = enumerate_feasible(g)
    cap = capacity_check(space, nu, rho=float(rho))
    if not cap.interior:
        raise InapplicableError(
            f"target rates are not strictly inside {rho} x capacity region "
            f"(LP slack margin {cap.margin:.6g})"
        )
    sol = solve_fugacities(space, nu)
    fp = fixed_point_fugacities(space, nu)
    rates = service_rates(space, sol.fug)
    bounds = fugacity_bounds_report(space, nu, float(rho), nu_min)

    resolved = {
        "graph": graph_res, "seeds": seeds, "nu": nu.tolist(),
        "rho": float(rho), "nu_min": nu_min,
        "defaulted_keys": sorted(cfg.defaulted),
    }
    results = {
        "lambda": sol.fug.values,
        "r": sol.r,
        "service_rates": rates.s,
        "idle_neighborhood_mass": rates.p0,
        "grad_norm": sol.grad_norm,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "objective": sol.objective,
        "fixed_point_max_gap": float(np.max(np.abs(sol.fug.values - fp.fug.values))),
        "capacity": {"member": cap.member, "interior": cap.interior,
                     "margin": cap.margin, "rho": float(rho)},
        "bounds": {
            "chi": bounds.chi,
            "rho_ok": bounds.rho_ok,
            "upper_bound": bounds.upper_bound if math.isfinite(bounds.upper_bound) else None,
            "upper_ok": bounds.upper_ok,
            "nu_min": bounds.nu_min,
            "lower_ok": bounds.lower_ok,
        },
    }
    _write_report(out_dir / "fugacity_report.json", "fugacity", resolved, results)
    rows = [(v, nu[v], sol.fug.values[v], sol.r[v], rates.s[v], rates.p0[v])
            for v in range(g.n)]
    _write_csv(out_dir / "rates.csv", resolved,
               ["link", "nu", "lambda", "r", "service_rate", "idle_mass"], rows)
    print(f"fugacity: solved {g.n} links in {sol.iterations} iterations, "
          f"gradient norm {sol.grad_norm:.3g}, "
          f"fixed-point gap {results['fixed_point_max_gap']:.3g}")


def cmd_simulate(cfg: _Config, out_dir: Path) -> None:
    g, graph_res = _resolve_graph(cfg)
    rule, rule_res = _resolve_rule(cfg, g)
    seeds = _resolve_seeds(cfg)
    mode = cfg.take("mode", "fixed")
    nu = _rates(cfg.take("nu"), g.n, "nu")
    if mode == "fixed":
        _simulate_fixed_cmd(cfg, g, rule, seeds, nu, graph_res, rule_res, out_dir)
    elif mode == "adaptive":
        _simulate_adaptive_cmd(cfg, g, rule, seeds, nu, graph_res, rule_res, out_dir)
    else:
        raise ConfigError("mode must be 'fixed' or 'adaptive'")


def _simulate_fixed_cmd(cfg, g, rule, seeds, nu, graph_res, rule_res, out_dir) -> None:
    if cfg.has("lambda") == cfg.has("solve_targets"):
        raise ConfigError(
            "fixed mode needs exactly one of 'lambda' (fugacities) or "
            "'solve_targets' (service rates to solve fugacities for)"
        )
    if cfg.has("lambda"):
        lam = _rates(cfg.take("lambda"), g.n, "lambda")
        fug = FugacityVector(lam)
        fug_res = {"lambda": lam.tolist()}
    else:
        targets = _rates(cfg.take("solve_targets"), g.n, "solve_targets")
        space = enumerate_feasible(g)
        fug = solve_fugacities(space, targets).fug
        fug_res = {"solve_targets": targets.tolist(),
                   "lambda_solved": fug.values.tolist()}
    horizon = cfg.take("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon must be a positive integer")
    warmup = cfg.take("warmup", None)
    if warmup is None:
        warmup = min(default_warmup(g, fug, rule), horizon // 2)
    elif not isinstance(warmup, int) or warmup < 0:
        raise ConfigError("warmup must be a nonnegative integer")
    window_count = cfg.take("window_count", 100)
    if not isinstance(window_count, int) or window_count < 3:
        raise ConfigError("window_count must be an integer >= 3")
    record_trace = cfg.take("record_trace", False)
    if not isinstance(record_trace, bool):
        raise ConfigError("record_trace must be true or false")
    cfg.finish()

    resolved = {
        "graph": graph_res, "rule": rule_res, "seeds": seeds,
        "mode": "fixed", "nu": nu.tolist(), **fug_res,
        "horizon": horizon, "warmup": warmup, "window_count": window_count,
        "record_trace": record_trace,
        "defaulted_keys": sorted(cfg.defaulted),
    }

    # Mean-queue bound needs exact service rates, hence an enumerable space.
    bound_info = None
    btm = best_bound_tmix(g, fug, rule)
    if btm is not None and g.n <= 16:
        s_exact = service_rates(enumerate_feasible(g), fug).s
        if np.all(s_exact > nu):
            bound_info = {
                "bound_tmix": btm,
                "service_rates": s_exact,
                "per_queue_bound": per_queue_bound(btm, s_exact, nu),
            }

    per_seed = []
    window_rows = []
    trace_rows = []
    for replica, seed in enumerate(seeds):
        tr = simulate_fixed(
            g, fug, rule, nu, horizon, SimStreams.make(seed, replica),
            warmup=warmup, window_count=window_count, record_trace=record_trace,
        )
        stab = stability_diagnostic(tr.window_means)
        entry = {
            "seed": seed,
            "mean_queue": tr.mean_queue,
            "service_rate": tr.service_rate,
            "arrival_rate": tr.arrival_rate,
            "max_queue": tr.max_queue,
            "final_queue": tr.final_queue,
            "window_size": tr.window_size,
            "stability": _stability_dict(stab),
        }
        if bound_info is not None:
            entry["bound_holds"] = bool(
                np.all(tr.mean_queue <= bound_info["per_queue_bound"])
            )
        per_seed.append(entry)
        for w in range(tr.window_means.shape[0]):
            window_rows.append(
                (seed, w, *tr.window_means[w], tr.window_means[w].sum())
            )
        if record_trace:
            for t in range(horizon):
                trace_rows.append(
                    (seed, t + 1, int(tr.sigma_trace[t]),
                     *tr.queue_trace[t], *tr.arrival_trace[t])
                )

    results = {"per_seed": per_seed}
    if bound_info is not None:
        results["bound"] = bound_info
    _write_report(out_dir / "simulate_report.json", "simulate", resolved, results)
    qcols = [f"mean_q_{v}" for v in range(g.n)]
    _write_csv(out_dir / "windows.csv", resolved,
               ["seed", "window", *qcols, "total"], window_rows)
    if record_trace:
        _write_csv(out_dir / "trace.csv", resolved,
                   ["seed", "slot", "schedule_mask",
                    *[f"q_{v}" for v in range(g.n)],
                    *[f"arr_{v}" for v in range(g.n)]], trace_rows)
    stable = sum(1 for e in per_seed if e["stability"]["stable"])
    print(f"simulate (fixed): {len(seeds)} seed(s) x {horizon} slots, "
          f"{stable}/{len(seeds)} stable by slope proxy")


def _simulate_adaptive_cmd(cfg, g, rule, seeds, nu, graph_res, rule_res, out_dir) -> None:
    frames = cfg.take("frames")
    if not isinstance(frames, int) or frames < 1:
        raise ConfigError("frames must be a positive integer")
    B = cfg.take("B")
    B_eps = cfg.take("B_eps")
    for key, val in (("B", B), ("B_eps", B_eps)):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number")
    nu_min = cfg.take("nu_min", None)
    if nu_min is None:
        nu_min = float(nu.min())
        if nu_min <= 0.0:
            raise ConfigError(
                "nu_min defaults to min(nu) but some arrival rate is 0; "
                "set nu_min explicitly"
            )
    elif isinstance(nu_min, bool) or not isinstance(nu_min, (int, float)):
        raise ConfigError("nu_min must be a number")
    else:
        nu_min = float(nu_min)
    btm = cfg.take("bound_tmix", None)
    if btm is None:
        btm = best_bound_tmix(g, FugacityVector.uniform(g.n, math.exp(B)), rule)
        if btm is None:
            raise InapplicableError(
                "no standard mixing bound applies at the fugacity cap exp(B); "
                "supply bound_tmix explicitly"
            )
    elif not isinstance(btm, int) or btm < 1:
        raise ConfigError("bound_tmix must be a positive integer")
    t_override = cfg.take("frame_length_override", None)
    if t_override is not None and (not isinstance(t_override, int) or t_override < 1):
        raise ConfigError("frame_length_override must be a positive integer")
    initial = cfg.take("initial_queue", "empty")
    window_frames = cfg.take("window_frames", max(1, frames // 5))
    if not isinstance(window_frames, int) or not 1 <= window_frames <= frames:
        raise ConfigError("window_frames must be an integer in [1, frames]")
    if frames // window_frames < 3:
        raise ConfigError(
            "stability proxy needs at least 3 windows but frames // "
            f"window_frames = {frames // window_frames}; raise frames or "
            "lower window_frames"
        )
    cfg.finish()

    acfg = adaptive_params(g.n, float(B), float(B_eps), nu_min, btm,
                           T_override=t_override)
    if initial == "empty":
        init_q = None
    elif initial == "equilibrium":
        init_q = adaptive_equilibrium_queue(enumerate_feasible(g), nu, acfg)
    elif isinstance(initial, list):
        vals = _rates(initial, g.n, "initial_queue")
        if not np.all(vals == np.round(vals)):
            raise ConfigError("initial_queue entries must be integers")
        init_q = vals.astype(np.int64)
    else:
        raise ConfigError(
            "initial_queue must be 'empty', 'equilibrium', or a list of integers"
        )

    resolved = {
        "graph": graph_res, "rule": rule_res, "seeds": seeds,
        "mode": "adaptive", "nu": nu.tolist(), "frames": frames,
        "B": float(B), "B_eps": float(B_eps), "nu_min": nu_min,
        "bound_tmix": btm, "frame_length_override": t_override,
        "initial_queue": initial if isinstance(initial, str) else list(initial),
        "window_frames": window_frames,
        "defaulted_keys": sorted(cfg.defaulted),
    }

    per_seed = []
    frame_rows = []
    for replica, seed in enumerate(seeds):
        tr = simulate_adaptive(g, rule, nu, acfg, frames,
                               SimStreams.make(seed, replica),
                               initial_queue=init_q)
        W = frames // window_frames
        wm = tr.total_frame_means[: W * window_frames]
        wm = wm.reshape(W, window_frames).mean(axis=1)
        stab = stability_diagnostic(wm.reshape(-1, 1))
        per_seed.append({
            "seed": seed,
            "caps_respected": tr.caps_respected,
            "mean_queue": tr.mean_queue,
            "max_queue": tr.max_queue,
            "service_rate": tr.service_rate,
            "arrival_rate": tr.arrival_rate,
            "nu_min_ok": tr.nu_min_ok,
            "capacity_interior": tr.capacity_interior,
            "capacity_margin": tr.capacity_margin,
            "stability": _stability_dict(stab),
        })
        for j in range(frames):
            frame_rows.append(
                (seed, j, *tr.r_traj[j], *tr.lam_traj[j],
                 *tr.frame_mean_queue[j], *tr.frame_end_queue[j + 1])
            )

    results = {
        "controller": {
            "delta": acfg.delta, "alpha": acfg.alpha, "T": acfg.T,
            "r_min": acfg.r_min, "bound_tmix": acfg.bound_tmix,
        },
        "per_seed": per_seed,
    }
    _write_report(out_dir / "simulate_report.json", "simulate", resolved, results)
    header = ["seed", "frame"]
    header += [f"r_{v}" for v in range(g.n)]
    header += [f"lambda_{v}" for v in range(g.n)]
    header += [f"mean_q_{v}" for v in range(g.n)]
    header += [f"end_q_{v}" for v in range(g.n)]
    _write_csv(out_dir / "frames.csv", resolved, header, frame_rows)
    caps = all(e["caps_respected"] for e in per_seed)
    stable = sum(1 for e in per_seed if e["stability"]["stable"])
    print(f"simulate (adaptive): {len(seeds)} seed(s) x {frames} frames of "
          f"{acfg.T} slots, caps respected: {caps}, "
          f"{stable}/{len(seeds)} stable by slope proxy")


_COMMANDS = {
    "stationary": cmd_stationary,
    "mixing": cmd_mixing,
    "fugacity": cmd_fugacity,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pgd-csma",
        description="Parallel Glauber dynamics CSMA scheduling experiments.",
    )
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "stationary": "exact stationary law: product form vs transition matrix",
        "mixing": "TV mixing curves, analytic envelopes, coalescence sampling",
        "fugacity": "solve fugacities for target service rates, check bounds",
        "simulate": "queueing simulation with fixed or adaptive fugacities",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True,
                       help="path to the JSON config document")
        p.add_argument("--out-dir", default=".",
                       help="directory for report and CSV outputs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 2
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        print(f"error: config is not valid JSON: {e}", file=sys.stderr)
        return 2

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        _COMMANDS[args.command](_Config(raw), out_dir)
    except (ConfigError, GraphParseError, ParameterError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except HorizonError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except InapplicableError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except EnumerationLimitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
