"""Communication-round lower bounds, the support envelope, and sweeps.

Two kinds of strongly convex gap bound live here.  ``gap_lb_sc`` is the
closed form ``lam/(sqrt(kappa)+1) exp(-4k/(sqrt(kappa)+1)) |w*|^2``;
``gap_tail_sc`` is ``(lam/2) sum_{i>k} q^{2i}``, which follows directly from
the support envelope and strong convexity.  The closed form exceeds the
tail bound once ``k`` is a few rounds past zero (``q^{2k} <=
exp(-4k/(sqrt(kappa)+1))``), so only the tail bound is safe to hold an
optimal in-class method to.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hardfunc import q_ratio

# rounds >= NSC_CONSTANT * sqrt(L/eps) * |w*|, from the chain bound 3 L |w*|^2 / (32 (k+1)^2)
NSC_CONSTANT = math.sqrt(3.0 / 32.0) / 2.0


@dataclass(frozen=True)
class Envelope:
    """``E_{t,d}``: vectors whose coordinates ``t+1..d`` (1-based) vanish."""

    frontier: int
    dim: int

    def contains(self, vec) -> bool:
        return not np.any(np.asarray(vec)[self.frontier:])


def envelope_after(k: int, d: int) -> Envelope:
    if k < 0:
        raise ValueError(f"round index must be non-negative, got {k}")
    return Envelope(min(k, d), d)


def check_trace_envelope(trace, d: int) -> int | None:
    """First round ``k <= d`` whose support leaves ``E_{k,d}``, else ``None``."""
    for row in trace.rows:
        if row.round > d:
            break
        if row.support_max > envelope_after(row.round, d).frontier:
            return row.round
    return None


def _check_sc(lam, kappa):
    if not lam > 0 or not kappa > 1:
        raise ValueError(f"need lambda > 0 and kappa > 1, got {lam}, {kappa}")


def gap_lb_sc(lam: float, kappa: float, norm_sq: float, k: int) -> float:
    _check_sc(lam, kappa)
    if k < 0:
        raise ValueError("k must be non-negative")
    s = math.sqrt(kappa)
    return lam / (s + 1.0) * math.exp(-4.0 * k / (s + 1.0)) * norm_sq


def rounds_lb_sc(lam: float, kappa: float, norm_sq: float, eps: float) -> float:
    _check_sc(lam, kappa)
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = math.sqrt(kappa)
    return max(0.0, (s - 1.0) / 4.0 * math.log(lam * norm_sq / ((s + 1.0) * eps)))


def gap_lb_sc_geometric(lam: float, kappa: float, norm_sq: float, k: int) -> float:
    """``(lam/(sqrt(kappa)+1)) q^{2k} |w*|^2``: the bound before the exponential relaxation.

    ``rounds_lb_sc`` is a valid (smaller) solution of ``gap <= eps`` for it.
    """
    _check_sc(lam, kappa)
    s = math.sqrt(kappa)
    return lam / (s + 1.0) * q_ratio(kappa) ** (2 * k) * norm_sq


def gap_tail_sc(lam: float, kappa: float, d: int, k: int) -> float:
    """``(lam/2) sum_{i=k+1}^{d} q^{2i}``: any point of ``E_{k,d}`` is at least this far above ``f*``."""
    _check_sc(lam, kappa)
    if k >= d:
        return 0.0
    q2 = q_ratio(kappa) ** 2
    return 0.5 * lam * q2 ** (k + 1) * (1.0 - q2 ** (d - k)) / (1.0 - q2)


def gap_envelope_nsc(smoothness: float, d: int, k: int, scale: float = 1.0) -> float:
    """Exact ``min_{E_{k,d}} f - f*`` for the smooth convex chain."""
    if k >= d:
        return 0.0
    return scale * scale * smoothness / 8.0 * (1.0 / (k + 1) - 1.0 / (d + 1))


def rounds_lb_nsc(smoothness: float, norm_wstar: float, eps: float) -> float:
    if not smoothness > 0 or not eps > 0:
        raise ValueError("need L > 0 and eps > 0")
    return NSC_CONSTANT * math.sqrt(smoothness / eps) * norm_wstar


def _inc_denominator(kappa: float, n: int) -> float:
    s = math.sqrt(kappa)
    den = n * (s + 1.0) ** 2 - 4.0 * s
    if not den > 0:
        raise ValueError("n (sqrt(kappa)+1)^2 - 4 sqrt(kappa) must be positive")
    return den


def gap_lb_inc(lam: float, kappa: float, n: int, norm_sq: float, k: int) -> float:
    _check_sc(lam, kappa)
    if n < 1:
        raise ValueError("n must be at least 1")
    s = math.sqrt(kappa)
    return lam / 4.0 * math.exp(-4.0 * k * s / _inc_denominator(kappa, n)) * norm_sq


def rounds_lb_inc(lam: float, kappa: float, n: int, norm_sq: float, eps: float) -> float:
    _check_sc(lam, kappa)
    if n < 1 or not eps > 0:
        raise ValueError("need n >= 1 and eps > 0")
    s = math.sqrt(kappa)
    return max(0.0, _inc_denominator(kappa, n) / (4.0 * s) * math.log(lam * norm_sq / (4.0 * eps)))


def rounds_inc_asymptotic(lam: float, kappa: float, n: int, norm_wstar: float, eps: float) -> float:
    """``(sqrt(n kappa) + n) log(|w*| lam / eps)``, printed for reference only."""
    return (math.sqrt(n * kappa) + n) * math.log(norm_wstar * lam / eps)


# -- sweeps ---------------------------------------------------------------


@dataclass
class SweepRow:
    axis_value: float
    rounds: int
    lb_rounds: float
    dim: int

    @property
    def ratio(self) -> float:
        return self.rounds / self.lb_rounds if self.lb_rounds > 0 else math.inf


@dataclass
class SweepReport:
    axis: str
    solver: str
    rows: list[SweepRow]
    fit_slope: float
    fit_intercept: float
    fit_r2: float
    transform: str
    constants: dict = field(default_factory=dict)

    def to_csv(self, header: str | None = None) -> str:
        lines = [f"# {header}"] if header else []
        lines.append("axis_value,rounds,lb_rounds,ratio,dim")
        for r in self.rows:
            lines.append(f"{r.axis_value!r},{r.rounds},{r.lb_rounds!r},{r.ratio!r},{r.dim}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"axis": self.axis, "solver": self.solver, "transform": self.transform,
                "fitSlope": self.fit_slope, "fitIntercept": self.fit_intercept, "fitR2": self.fit_r2,
                "constants": self.constants}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


class SweepError(RuntimeError):
    pass


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line ``y = a x + b`` and its coefficient of determination."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def _estimated_rounds(solver: str, kappa: float, lam: float, norm_sq: float, eps: float) -> int:
    log_term = max(1.0, math.log(lam * (kappa + 1.0) * norm_sq / eps))
    if solver == "dist-gd":
        return int(math.ceil(kappa * log_term))
    if solver == "dist-cg":
        return int(math.ceil(math.sqrt(kappa) * log_term))
    return int(math.ceil(2.0 * math.sqrt(kappa) * log_term))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("FEATROUND_THREADS", "1")))
    except ValueError:
        return 1


def _sc_point(solver, lam, kappa, eps, m, budget, max_rounds):
    from .blockview import equal_partition
    from .hardfunc import make_sc_instance
    from .solvers import run_solver, SolverSpec

    q = q_ratio(kappa)
    est = _estimated_rounds(solver, kappa, lam, q * q / (1.0 - q * q), eps)
    d = m * int(math.ceil((est + 16) / m))
    while True:
        inst = make_sc_instance(lam, kappa, d)
        trace = run_solver(SolverSpec(solver, max_rounds=max_rounds), inst, equal_partition(d, m), eps, budget)
        if not trace.valid or trace.rounds_to_eps is None:
            raise SweepError(f"{solver} at kappa={kappa}, eps={eps}, d={d}: status={trace.status}, "
                             f"rounds_to_eps={trace.rounds_to_eps}")
        if trace.rounds_to_eps + 16 <= d:
            ns = float(inst.wstar @ inst.wstar)
            return SweepRow(kappa, trace.rounds_to_eps, rounds_lb_sc(lam, kappa, ns, eps), d)
        d *= 2


def _nsc_point(solver, smoothness, eps, m, budget, max_rounds):
    from .blockview import equal_partition
    from .hardfunc import NscChainInstance
    from .solvers import run_solver, SolverSpec

    # chain length tied to the target accuracy (d ~ 2k+1 with k ~ sqrt(L/(2 eps))), |w*| = 1
    d = int(math.ceil(math.sqrt(2.0 * smoothness / eps))) + 1
    d = m * int(math.ceil(d / m))
    inst = NscChainInstance.normalized(smoothness, d)
    trace = run_solver(SolverSpec(solver, max_rounds=max_rounds), inst, equal_partition(d, m), eps, budget)
    if not trace.valid or trace.rounds_to_eps is None:
        raise SweepError(f"{solver} at eps={eps}, d={d}: status={trace.status}")
    return SweepRow(eps, trace.rounds_to_eps, rounds_lb_nsc(smoothness, 1.0, eps), d)


def _inc_point(n, lam, kappa, eps, m, sub, seeds, budget):
    from .blockview import equal_partition
    from .hardfunc import make_inc_instance
    from .solvers import incremental_expectation

    inst = make_inc_instance(lam, kappa, n * sub, m, n)
    summary = incremental_expectation(inst, equal_partition(inst.dim, m), eps, seeds=seeds, budget=budget)
    if not summary.valid or summary.rounds_to_eps is None:
        raise SweepError(f"dist-incremental at n={n}: did not reach eps={eps}")
    ns = float(inst.wstar @ inst.wstar)
    return SweepRow(n, summary.rounds_to_eps, rounds_lb_inc(lam, kappa, n, ns, eps), inst.dim)


def run_sweep(axis: str, grid, solver: str = "dist-agd", *, kind: str | None = None, lam: float = 1.0,
              kappa: float = 9.0, smoothness: float = 4.0, eps: float = 1e-6, machines: int = 1,
              budget=None, max_rounds: int = 200000, subblock: int = 30, seeds: int = 20) -> SweepReport:
    """Run ``solver`` over ``grid`` and fit rounds against the matching transform.

    ``axis="kappa"``: strongly convex chain, rounds vs ``sqrt(kappa)``
    (linear fit).  ``axis="eps"``: the smooth convex chain by default
    (``kind="sc"`` for the strongly convex one), log-log fit of rounds vs
    eps.  ``axis="n"``: incremental instance, rounds vs ``n``.  The
    dimension is sized per grid point so that the run finishes well inside
    the range where the envelope argument applies.
    """
    grid = list(grid)
    if len(grid) < 4:
        raise SweepError(f"a fit needs at least 4 grid points, got {len(grid)}")
    if axis == "kappa":
        jobs = [lambda k=k: _sc_point(solver, lam, k, eps, machines, budget, max_rounds) for k in grid]
        transform = "sqrt"
    elif axis == "eps":
        if (kind or "nsc") == "nsc":
            jobs = [lambda e=e: _nsc_point(solver, smoothness, e, machines, budget, max_rounds) for e in grid]
        else:
            jobs = [lambda e=e: _sc_point(solver, lam, kappa, e, machines, budget, max_rounds) for e in grid]
        transform = "loglog"
    elif axis == "n":
        jobs = [lambda n=n: _inc_point(int(n), lam, kappa, eps, machines, subblock, seeds, budget) for n in grid]
        solver = "dist-incremental"
        transform = "linear"
    else:
        raise SweepError(f"unknown sweep axis {axis!r}")
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        rows = list(pool.map(lambda job: job(), jobs))
    if axis == "eps":
        for r in rows:
            r.axis_value = float(r.axis_value)
    xs = np.array([r.axis_value for r in rows], float)
    ys = np.array([r.rounds for r in rows], float)
    if transform == "sqrt":
        a, b, r2 = linear_fit(np.sqrt(xs), ys)
    elif transform == "loglog":
        a, b, r2 = linear_fit(np.log(xs), np.log(ys))
    else:
        a, b, r2 = linear_fit(xs, ys)
    constants = {"nsc_constant": NSC_CONSTANT, "log_base": "e"}
    return SweepReport(axis, solver, rows, a, b, r2, transform, constants)
