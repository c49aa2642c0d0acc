"""``featround run|verify|sweep|gen --config <path> [--out <dir>] [--seed <int>]``.

Exit codes: 0 success, 1 invalid configuration, 2 communication or
addition budget exceeded, 3 feasible-set audit or support-envelope
violation, 4 a measured gap fell below the closed-form exponential gap
formula while every class check passed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bounds
from .blockview import Partition, equal_partition, make_partition
from .bspsim import Budget, ledger_csv
from .hardfunc import (IncSeparableInstance, Instance, NscChainInstance, ScChainInstance,
                       exact_minimizer, instance_from_dict, optimal_value)
from .solvers import SolverSpec, Trace, run_solver

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_CLASS, EXIT_BOUND = 0, 1, 2, 3, 4

log = logging.getLogger("featround")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    instance: Instance
    partition: Partition
    solver: SolverSpec
    budget: Budget
    epsilon: float
    n: int | None
    seed: int
    sweep: dict | None
    raw: dict

    @property
    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _partition(spec, dim: int) -> Partition:
    if spec is None or spec == "equal":
        return equal_partition(dim, 1)
    if "sizes" in spec:
        return make_partition(dim, spec["sizes"])
    return equal_partition(dim, int(spec.get("m", 1)))


def parse_config(raw: dict, seed: int | None = None) -> RunConfig:
    """Validate a JSON configuration; every problem becomes a :class:`ConfigError`."""
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    try:
        inst = instance_from_dict(raw["instance"])
        part_spec = raw.get("partition")
        if isinstance(inst, IncSeparableInstance) and (part_spec in (None, "equal")):
            part_spec = {"m": inst.machines}
        part = _partition(part_spec, inst.dim)
        solver_raw = dict(raw.get("solver", {"name": "dist-agd"}))
        solver_raw.setdefault("seed", raw.get("seed", 0))
        if seed is not None:
            solver_raw["seed"] = seed
        solver = SolverSpec.from_dict(solver_raw)
        budget = Budget(**raw.get("budget", {}))
        eps = float(raw.get("epsilon", 1e-6))
        if not eps > 0:
            raise ValueError(f"epsilon must be positive, got {eps}")
        n = raw.get("n")
    except KeyError as e:
        raise ConfigError(f"missing configuration field {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if solver.name == "dist-incremental":
        if not isinstance(inst, IncSeparableInstance):
            raise ConfigError("dist-incremental requires an 'inc' instance")
        if part != equal_partition(inst.dim, inst.machines):
            raise ConfigError("dist-incremental requires the equal partition with one block per instance machine")
    if solver.name == "inject-stub" and part.m < 2:
        raise ConfigError("inject-stub needs at least two machines")
    if n is not None and (int(n) != n or n < 2 * part.m):
        raise ConfigError(f"n must be an integer >= 2m = {2 * part.m}")
    sweep = raw.get("sweep")
    if sweep is not None:
        if sweep.get("axis") not in ("kappa", "eps", "n"):
            raise ConfigError(f"sweep axis must be kappa, eps or n, got {sweep.get('axis')!r}")
        if len(sweep.get("grid", [])) < 4:
            raise ConfigError("sweep grid needs at least 4 points for a fit")
    return RunConfig(inst, part, solver, budget, eps, None if n is None else int(n),
                     int(raw.get("seed", 0)), sweep, raw)


def load_config(path: str | Path, seed: int | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(raw, seed)


def _norm_sq(inst: Instance) -> float:
    return float(inst.wstar @ inst.wstar)


def lower_bound_rounds(inst: Instance, eps: float) -> float:
    if isinstance(inst, ScChainInstance):
        return bounds.rounds_lb_sc(inst.lam, inst.kappa, _norm_sq(inst), eps)
    if isinstance(inst, NscChainInstance):
        return bounds.rounds_lb_nsc(inst.smoothness, math.sqrt(_norm_sq(inst)), eps)
    return bounds.rounds_lb_inc(inst.lam, inst.kappa, inst.samples, _norm_sq(inst), eps)


def _execute(cfg: RunConfig) -> Trace:
    kwargs = {}
    if cfg.solver.name != "dist-incremental":
        kwargs["n"] = cfg.n
    return run_solver(cfg.solver, cfg.instance, cfg.partition, cfg.epsilon, cfg.budget, **kwargs)


def _summary(cfg: RunConfig, trace: Trace) -> dict:
    lb = lower_bound_rounds(cfg.instance, cfg.epsilon)
    rounds = trace.rounds_to_eps
    ratio = rounds / lb if rounds is not None and lb > 0 else None
    return {"config_hash": cfg.digest, "solver": trace.solver, "status": trace.status,
            "roundsToEps": rounds, "lbRounds": lb, "ratio": ratio, "valid": trace.valid,
            "bytesTotal": trace.bytes_total, "rounds": len(trace.ledger),
            "rejections": [{"round": k, "machine": j, "reason": v.reason, "detail": v.detail}
                           for k, j, v in trace.rejections]}


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _status_code(trace: Trace) -> int:
    if trace.status == "budget":
        return EXIT_BUDGET
    if trace.status == "audit" or trace.rejections:
        return EXIT_CLASS
    return EXIT_OK


def cmd_run(cfg: RunConfig, out: Path) -> int:
    trace = _execute(cfg)
    header = f"config_hash={cfg.digest}"
    _write(out, "trace.csv", trace.to_csv(header))
    _write(out, "ledger.csv", ledger_csv(trace.ledger, header))
    summary = _summary(cfg, trace)
    _write(out, "summary.json", _dump(summary))
    print(f"{trace.solver}: status={trace.status} roundsToEps={trace.rounds_to_eps} "
          f"lbRounds={summary['lbRounds']:.3f} valid={trace.valid}")
    return _status_code(trace)


def verify_trace(cfg: RunConfig, trace: Trace) -> dict:
    """Class, envelope, gap-bound and byte checks for one finished trace."""
    inst, d = cfg.instance, cfg.instance.dim
    n = cfg.n or (inst.samples if isinstance(inst, IncSeparableInstance) else 2 * cfg.partition.m)
    cap = cfg.budget.byte_cap(n, d)
    checks = {
        "budget": trace.status != "budget" and all(r.budget_ok for r in trace.ledger),
        "bytes_within_cap": all(r.bytes_total <= cap for r in trace.ledger),
        "audit": not trace.rejections,
    }
    chain = isinstance(inst, (ScChainInstance, NscChainInstance))
    if chain:
        checks["envelope"] = bounds.check_trace_envelope(trace, d) is None
    if isinstance(inst, ScChainInstance):
        rows = [r for r in trace.rows if r.round <= d]
        checks["gap_tail_bound"] = all(r.gap >= bounds.gap_tail_sc(inst.lam, inst.kappa, d, r.round) for r in rows)
        checks["gap_closed_form_bound"] = all(r.gap >= r.lb_gap for r in rows)
    elif isinstance(inst, NscChainInstance):
        checks["gap_tail_bound"] = all(r.gap >= r.lb_gap for r in trace.rows if r.round <= d)
    return checks


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    trace = _execute(cfg)
    checks = verify_trace(cfg, trace)
    result = {"config_hash": cfg.digest, "checks": checks, "roundsToEps": trace.rounds_to_eps}
    _write(out, "verify.json", _dump(result))
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if not (checks["budget"] and checks["bytes_within_cap"]):
        return EXIT_BUDGET
    if not (checks["audit"] and checks.get("envelope", True) and checks.get("gap_tail_bound", True)):
        return EXIT_CLASS
    if not checks.get("gap_closed_form_bound", True):
        return EXIT_BOUND
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    sw = cfg.sweep
    if sw is None:
        raise ConfigError("sweep command needs a 'sweep' section")
    inst = cfg.instance
    params = dict(lam=getattr(inst, "lam", 1.0), kappa=getattr(inst, "kappa", 9.0),
                  smoothness=getattr(inst, "smoothness", 4.0), eps=cfg.epsilon,
                  machines=cfg.partition.m, budget=cfg.budget)
    if sw["axis"] == "eps":
        params["kind"] = inst.kind
    if sw["axis"] == "n":
        params["machines"] = getattr(inst, "machines", 1)
        params["seeds"] = int(sw.get("seeds", 20))
    try:
        report = bounds.run_sweep(sw["axis"], sw["grid"], cfg.solver.name, **params)
    except bounds.SweepError as e:
        print(f"sweep aborted: {e}", file=sys.stderr)
        return EXIT_CLASS
    header = f"config_hash={cfg.digest}"
    _write(out, "sweep.csv", report.to_csv(header))
    summary = report.summary()
    summary["config_hash"] = cfg.digest
    _write(out, "fit.json", _dump(summary))
    print(f"sweep {report.axis}: slope={report.fit_slope:.4f} R2={report.fit_r2:.4f}")
    return EXIT_OK


def cmd_gen(cfg: RunConfig, out: Path) -> int:
    inst = cfg.instance
    info = {"config_hash": cfg.digest, "instance": inst.to_dict(), "optValue": optimal_value(inst),
            "normSq": _norm_sq(inst), "partition": cfg.partition.to_dict()}
    if not isinstance(inst, NscChainInstance):
        info["q"] = exact_minimizer(inst).q
    _write(out, "instance.json", _dump(info))
    lines = [f"# config_hash={cfg.digest}", "index,wstar"]
    lines += [f"{i + 1},{float(v)!r}" for i, v in enumerate(np.asarray(inst.wstar))]
    _write(out, "wstar.csv", "\n".join(lines) + "\n")
    print(f"{inst.kind} instance, dim={inst.dim}, f*={info['optValue']!r}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep, "gen": cmd_gen}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="featround", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default="out")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return COMMANDS[args.command](cfg, Path(args.out))
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
