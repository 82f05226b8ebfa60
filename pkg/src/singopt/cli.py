"""Command-line experiment runner.

``singopt run --config exp.toml [--out DIR]`` runs every configured solver on
one problem and writes ``trace_<label>.csv`` files plus ``summary.json``.
``singopt conditions --problem NAME ...`` prints landscape estimates as JSON.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .analysis import measure_decrease, rate_of
from .conditions import (
    EB,
    LOJA,
    PL,
    QG,
    RegionSpec,
    check_mb,
    estimate_all,
    shrink_study,
    verify_implications,
)
from .errors import ConfigError, SingoptError
from .problems import SEEDED, ProblemSpec, build_problem, start_near_S
from .solvers import CSV_FIELDS, DIVERGENCE, make_config, run_solver

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


# ------------------------------------------------------------ serialization


def _num(v):
    """JSON-safe scalar: NaN and infinities become None."""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return _num(obj)


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in trace.records:
        w.writerow([_csv_cell(getattr(r, name)) for name in CSV_FIELDS])
    return buf.getvalue()


def read_trace_csv(path) -> list[dict]:
    """Parse a trace CSV back into rows of floats (empty cells become NaN)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: float(v) if v != "" else float("nan") for k, v in row.items()})
    return rows


# ------------------------------------------------------------------ configs


_TOP_KEYS = {"seed", "output_dir", "problem", "x0", "solvers", "analyses"}


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required field '{key}'")
    return table[key]


def _check_keys(table: dict, allowed: set, where: str):
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")


def load_config(path) -> dict:
    """Read and validate an experiment config; raises ConfigError with context."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "config")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("config.seed: must be an integer")
    prob = _require(raw, "problem", "config")
    if not isinstance(prob, dict):
        raise ConfigError("config.problem: must be a table")
    _check_keys(prob, {"name", "params"}, "problem")
    name = _require(prob, "name", "problem")
    params = dict(prob.get("params", {}))
    solvers = raw.get("solvers", [])
    if not isinstance(solvers, list) or not solvers:
        raise ConfigError("config.solvers: at least one [[solvers]] entry is required")
    labels = []
    for i, s in enumerate(solvers):
        where = f"solvers[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(f"{where}: must be a table")
        _require(s, "algorithm", where)
        labels.append(s.get("label", s["algorithm"]))
    if len(set(labels)) != len(labels):
        raise ConfigError(f"config.solvers: duplicate labels {labels}")
    x0 = _require(raw, "x0", "config")
    _check_keys(x0, {"coords", "near_S", "seed"}, "x0")
    if ("coords" in x0) == ("near_S" in x0):
        raise ConfigError("x0: give exactly one of 'coords' or 'near_S'")
    analyses = raw.get("analyses", {})
    _check_keys(analyses, {"rate", "decrease", "mb_check", "conditions"}, "analyses")
    return {
        "seed": seed,
        "output_dir": raw.get("output_dir"),
        "problem": {"name": name, "params": params},
        "x0": x0,
        "solvers": solvers,
        "labels": labels,
        "analyses": analyses,
        "source": str(path),
    }


def _build(cfg: dict):
    prob = cfg["problem"]
    spec = ProblemSpec(prob["name"], dict(prob["params"]), cfg["seed"])
    try:
        p = build_problem(spec)
    except SingoptError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    x0cfg = cfg["x0"]
    try:
        if "coords" in x0cfg:
            x0 = p.manifold.check_point(np.asarray(x0cfg["coords"], dtype=float))
        else:
            rng = np.random.default_rng(x0cfg.get("seed", cfg["seed"]))
            x0 = start_near_S(p, float(x0cfg["near_S"]), rng)
    except (SingoptError, TypeError, ValueError) as exc:
        raise ConfigError(f"x0: {exc}") from exc
    solver_cfgs = []
    for i, s in enumerate(cfg["solvers"]):
        opts = {k: v for k, v in s.items() if k not in ("algorithm", "label")}
        try:
            solver_cfgs.append(make_config(s["algorithm"], **opts))
        except (SingoptError, TypeError) as exc:
            raise ConfigError(f"solvers[{i}]: {exc}") from exc
    return p, x0, solver_cfgs


# ------------------------------------------------------------------ reports


def _estimate_dict(est) -> dict:
    return {
        "kind": est.kind,
        "mu_hat": est.mu_hat,
        "theta_hat": est.theta_hat,
        "argmin_sample": est.argmin_sample,
        "n_used": est.n_used,
    }


def conditions_report(p, region: RegionSpec, slack=0.9, threshold=0.1, levels=3, shrink=0.1) -> dict:
    est = estimate_all(p, region)
    mb = None
    if p.is_c2:
        anchor = p.oracle.project_to_S(region.center)
        mb = check_mb(p, anchor, seed=region.seed)
    imp = verify_implications([est[k] for k in (PL, EB, QG)], mb, slack)
    study = shrink_study(p, region, levels, shrink)
    verdicts = {
        kind: {"mu_hat_levels": vals, "holds": bool(min(vals) >= threshold)}
        for kind, vals in study.items()
    }
    return {
        "problem": p.name,
        "smoothness": p.smoothness,
        "solution_set": {
            "dim_S": p.oracle.dim_S,
            "is_submanifold": p.oracle.is_submanifold,
            "hessian_rank_d": p.oracle.hessian_rank_d,
        },
        "region": {
            "center": region.center,
            "r_inner": region.r_inner,
            "r_outer": region.r_outer,
            "n_samples": region.n_samples,
            "seed": region.seed,
        },
        "estimates": {k: _estimate_dict(v) for k, v in est.items()},
        "theta_hat": est[LOJA].theta_hat if LOJA in est else None,
        "mb": None if mb is None else {**asdict(mb), "is_morse_bott": mb.is_morse_bott},
        "implications": {
            "slack": imp.slack,
            "edges": [asdict(e) for e in imp.edges],
            "counterexample": imp.counterexample,
            "c1_counterexample": imp.counterexample and imp.c1_context,
        },
        "verdicts": {"threshold": threshold, "shrink": shrink, **verdicts},
    }


def _run_summary(p, trace, analyses: dict, mu_pl) -> dict:
    last = trace.final()
    out = {
        "termination": trace.termination,
        "iterations": trace.iterations,
        "final_x": trace.x_final,
        "final_f": last.f,
        "final_grad_norm": last.grad_norm,
        "final_dist_S": last.dist_S,
    }
    if analyses.get("rate", True) and p.oracle is not None:
        try:
            out["rate"] = asdict(rate_of(trace, "dist_S"))
        except SingoptError as exc:
            out["rate"] = {"error": str(exc)}
    if analyses.get("decrease", False) and p.oracle is not None:
        rep = measure_decrease(trace, 0.5, mu_pl, p.f_star)
        out["decrease"] = asdict(rep)
    return out


def _threads(n: int) -> int:
    cap = os.environ.get("SINGOPT_THREADS")
    try:
        limit = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        limit = 1
    return max(1, min(n, limit))


def run_experiment(config_path, out_dir=None, stderr=sys.stderr) -> int:
    """Run a configured experiment; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        p, x0, solver_cfgs = _build(cfg)
        cond_cfg = cfg["analyses"].get("conditions")
        region = None
        if cond_cfg is not None:
            _check_keys(cond_cfg, {"center", "r_inner", "r_outer", "samples", "seed"}, "analyses.conditions")
            try:
                region = RegionSpec(
                    np.asarray(cond_cfg.get("center", p.anchor), dtype=float),
                    float(_require(cond_cfg, "r_outer", "analyses.conditions")),
                    float(cond_cfg.get("r_inner", 0.0)),
                    int(cond_cfg.get("samples", 2000)),
                    int(cond_cfg.get("seed", cfg["seed"])),
                )
            except (SingoptError, TypeError, ValueError) as exc:
                raise ConfigError(f"analyses.conditions: {exc}") from exc
        target = Path(out_dir or cfg["output_dir"] or Path(config_path).with_suffix(""))
        target.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG

    conditions = None
    mu_pl = None
    if region is not None:
        conditions = conditions_report(p, region)
        mu_pl = conditions["estimates"][PL]["mu_hat"]

    with ThreadPoolExecutor(max_workers=_threads(len(solver_cfgs))) as pool:
        traces = list(pool.map(lambda c: run_solver(p, x0, c), solver_cfgs))

    runs = {}
    diverged = False
    for label, trace in zip(cfg["labels"], traces):
        (target / f"trace_{label}.csv").write_text(trace_to_csv(trace))
        runs[label] = _run_summary(p, trace, cfg["analyses"], mu_pl)
        diverged |= trace.termination == DIVERGENCE

    mb = None
    if cfg["analyses"].get("mb_check", False) and p.is_c2:
        mb = asdict(check_mb(p, p.anchor, seed=cfg["seed"]))

    summary = {
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "seed": cfg["seed"],
        "config": {k: cfg[k] for k in ("problem", "x0", "solvers", "analyses")},
        "x0": x0,
        "runs": runs,
        "conditions": conditions,
        "mb": mb,
    }
    (target / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return EXIT_DIVERGED if diverged else EXIT_OK


# --------------------------------------------------------------------- main


def _parse_params(text: str) -> dict:
    out = {}
    if not text:
        return out
    for item in text.split(","):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"bad parameter {item!r}; expected key=value")
        parts = val.split(";")
        nums = [float(v) for v in parts]
        out[key.strip()] = nums if len(parts) > 1 else nums[0]
    return out


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="singopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="TOML experiment file")
    run.add_argument("--out", default=None, help="output directory")

    cond = sub.add_parser("conditions", help="estimate PL/EB/QG/MB constants")
    cond.add_argument("--problem", required=True)
    cond.add_argument(
        "--params", default="", help="comma-separated key=value; list values use ';'"
    )
    cond.add_argument("--center", default=None, help="comma-separated coordinates")
    cond.add_argument("--r-inner", type=float, default=0.0)
    cond.add_argument("--r-outer", type=float, default=0.1)
    cond.add_argument("--samples", type=int, default=2000)
    cond.add_argument("--seed", type=int, default=0)
    cond.add_argument("--slack", type=float, default=0.9)
    cond.add_argument("--threshold", type=float, default=0.1,
                      help="mu_hat below this on any shrink level means the condition fails")
    cond.add_argument("--levels", type=int, default=3)
    cond.add_argument("--shrink", type=float, default=0.1)
    return parser


def run_conditions(args, stdout=sys.stdout, stderr=sys.stderr) -> int:
    try:
        params = _parse_params(args.params)
        if args.problem in SEEDED:
            params.setdefault("seed", args.seed)
        for key in ("m", "n", "p", "r", "seed"):
            if key in params:
                params[key] = int(params[key])
        p = build_problem(args.problem, **params)
        center = p.anchor if args.center is None else _parse_vector(args.center)
        region = RegionSpec(center, args.r_outer, args.r_inner, args.samples, args.seed)
        report = conditions_report(p, region, args.slack, args.threshold, args.levels, args.shrink)
    except (SingoptError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    json.dump(_jsonable(report), stdout, indent=2, sort_keys=True)
    stdout.write("\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config, args.out)
    return run_conditions(args)


if __name__ == "__main__":
    sys.exit(main())
