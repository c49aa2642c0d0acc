"""In-class distributed solvers driven through the round engine.

Every vector a machine keeps is submitted to :meth:`Engine.add` with its
generators declared, so class membership is checked on every update.  The
stopping rule reads the true gap (closed-form optimum); that is lab
instrumentation, not information the machines use.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bounds
from .blockview import BlockVector, Partition, block_gradient, equal_partition
from .bspsim import (
    AuditResult, Budget, BudgetExceeded, Engine, RoundLog,
    copy_of, cross_hessian, diag_hessian, gradient_at, sample_gradient, support_frontier,
)
from .hardfunc import IncSeparableInstance, Instance, NscChainInstance, ScChainInstance, tri_rows

SOLVERS = ("dist-gd", "dist-agd", "dist-cg", "dist-incremental", "inject-stub")
TRACE_COLUMNS = ("round", "gap", "lb_gap", "support_max", "bytes_comp", "bytes_comm", "valid")


@dataclass(frozen=True)
class SolverSpec:
    name: str
    step_size: float | None = None
    momentum: float | None = None
    seed: int = 0
    max_rounds: int = 20000

    def __post_init__(self):
        if self.name not in SOLVERS:
            raise ValueError(f"unknown solver {self.name!r}; choose from {SOLVERS}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")

    def to_dict(self) -> dict:
        return {"name": self.name, "step_size": self.step_size, "momentum": self.momentum,
                "seed": self.seed, "max_rounds": self.max_rounds}

    @classmethod
    def from_dict(cls, data: dict) -> "SolverSpec":
        return cls(data["name"], data.get("step_size"), data.get("momentum"),
                   int(data.get("seed", 0)), int(data.get("max_rounds", 20000)))


@dataclass
class TraceRow:
    round: int
    gap: float
    lb_gap: float
    support: tuple[int, ...]

    @property
    def support_max(self) -> int:
        return max(self.support)


@dataclass
class Trace:
    solver: str
    dim: int
    rows: list[TraceRow] = field(default_factory=list)
    rounds_to_eps: int | None = None
    ledger: list[RoundLog] = field(default_factory=list)
    valid: bool = True
    status: str = "ok"
    rejections: list[tuple[int, int, AuditResult]] = field(default_factory=list)
    iterates: list[np.ndarray] | None = None
    final: np.ndarray | None = None

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    @property
    def bytes_total(self) -> int:
        return sum(r.bytes_total for r in self.ledger)

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        by_round = {r.round: r for r in self.ledger}
        for row in self.rows:
            rl = by_round.get(row.round)
            w.writerow([row.round, repr(row.gap), repr(row.lb_gap), row.support_max,
                        rl.bytes_comp if rl else 0, rl.bytes_comm if rl else 0,
                        int(rl.budget_ok if rl else True)])
        return buf.getvalue()


class AuditAbort(RuntimeError):
    """An in-class solver produced a vector the audit refused."""


def lower_gap(inst: Instance, k: int) -> float:
    """Per-round gap lower-bound value shown next to the measured gap."""
    if isinstance(inst, ScChainInstance):
        return bounds.gap_lb_sc(inst.lam, inst.kappa, float(inst.wstar @ inst.wstar), k)
    if isinstance(inst, NscChainInstance):
        return bounds.gap_envelope_nsc(inst.smoothness, inst.dim, k, inst.scale)
    return bounds.gap_lb_inc(inst.lam, inst.kappa, inst.samples, float(inst.wstar @ inst.wstar), k)


def _keep(engine: Engine, j: int, vec, prov) -> int:
    idx, verdict = engine.add(j, vec, prov)
    if idx is None:
        raise AuditAbort(f"machine {j}: {verdict.reason}: {verdict.detail}")
    return idx


def _boundary_exchange(engine: Engine, blocks: list[np.ndarray]) -> list[np.ndarray]:
    """One ReduceAll carrying each block's first and last coordinate.

    Returns, per machine, a full-length view holding its own block plus the
    neighbouring boundary coordinates, which is all a tridiagonal row needs.
    """
    part = engine.part
    m = part.m
    if engine.n < 2 * m:
        raise ValueError(f"payload length n={engine.n} cannot carry {2 * m} boundary values")
    contributions = []
    for j, b in enumerate(blocks):
        c = np.zeros(engine.n)
        c[2 * j], c[2 * j + 1] = b[0], b[-1]
        contributions.append(c)
    payload = engine.reduce_all(contributions, "sum")
    views = []
    for j in range(m):
        r = part.block(j)
        v = np.zeros(part.dim)
        v[r.start:r.stop] = blocks[j]
        if j > 0:
            v[r.start - 1] = payload[2 * (j - 1) + 1]
        if j < m - 1:
            v[r.stop] = payload[2 * (j + 1)]
        views.append(v)
    return views


def _run(name: str, engine: Engine, eps: float, max_rounds: int, round_fn: Callable[[int], bool],
         iterate: Callable[[], np.ndarray], stop: bool, keep_iterates: bool) -> Trace:
    inst, part = engine.inst, engine.part
    trace = Trace(name, inst.dim, iterates=[] if keep_iterates else None)

    def record(k):
        w = iterate()
        sup = tuple(max(fs.frontier, support_frontier(w[r.start:r.stop], r.start))
                    for fs, r in zip(engine.sets, part.blocks))
        gap = inst.gap(w)
        trace.rows.append(TraceRow(k, gap, lower_gap(inst, k), sup))
        if keep_iterates:
            trace.iterates.append(w.copy())
        if gap <= eps and trace.rounds_to_eps is None:
            trace.rounds_to_eps = k
        return gap <= eps

    done = record(0)
    k = 0
    while not (done and stop) and k < max_rounds:
        k = engine.begin_round()
        try:
            more = round_fn(k)
        except BudgetExceeded:
            engine.finalize_round()
            trace.status = "budget"
            break
        except AuditAbort:
            engine.finalize_round()
            trace.status = "audit"
            break
        engine.finalize_round()
        done = record(k)
        if more is False:
            break
    trace.ledger = list(engine.logs)
    trace.rejections = list(engine.rejections)
    trace.valid = engine.valid and trace.status == "ok"
    if trace.status == "ok" and engine.rejections:
        trace.status = "audit"
    trace.final = iterate()
    return trace


def _engine(inst, part, budget, n, family="F", retain=4):
    return Engine(inst, part, budget, n=n, family=family, retain=retain)


def dist_gd(inst: Instance, part: Partition, eps: float, budget: Budget | None = None,
            max_rounds: int = 20000, step_size: float | None = None, n: int | None = None,
            stop: bool = True, keep_iterates: bool = False, _inject: bool = False) -> Trace:
    """Distributed gradient descent with step ``1/L``.

    Per round: one ReduceAll with the boundary coordinates, a local
    partial-gradient step on every machine, and one broadcast of the new
    block.
    """
    engine = _engine(inst, part, budget, n)
    step = 1.0 / inst.smoothness if step_size is None else step_size
    x = [np.zeros(s) for s in part.sizes]
    ix = [0] * part.m

    def round_fn(k):
        views = _boundary_exchange(engine, x)
        at = dict(enumerate(ix))
        new_x, new_ix = [], []
        for j in range(part.m):
            g = block_gradient(inst, part, j, views[j]).values
            xj = x[j] - step * g
            if _inject and k == 1 and j == 1:
                # negative control: machine 2 claims a gradient move onto e_1 of its block
                xj = np.zeros(part.sizes[j])
                xj[0] = 1.0
                idx, _ = engine.add(j, xj, [gradient_at(at)], enforce=False)
            else:
                idx = _keep(engine, j, xj, [copy_of(ix[j]), gradient_at(at)])
            new_x.append(xj)
            new_ix.append(idx)
        x[:], ix[:] = new_x, new_ix
        for j in range(part.m):
            engine.broadcast(j, BlockVector(j, x[j]))
        return True

    name = "inject-stub" if _inject else "dist-gd"
    return _run(name, engine, eps, max_rounds, round_fn, lambda: part.join(x), stop, keep_iterates)


def inject_stub(inst, part, eps, budget=None, max_rounds=20000, n=None, stop=True, keep_iterates=False) -> Trace:
    """Gradient descent plus one out-of-class update (machine 2, round 1)."""
    if part.m < 2:
        raise ValueError("the injection control needs at least two machines")
    return dist_gd(inst, part, eps, budget, max_rounds, n=n, stop=stop,
                   keep_iterates=keep_iterates, _inject=True)


def dist_agd(inst: Instance, part: Partition, eps: float, budget: Budget | None = None,
             max_rounds: int = 20000, step_size: float | None = None, momentum: float | None = None,
             n: int | None = None, stop: bool = True, keep_iterates: bool = False) -> Trace:
    """Distributed Nesterov acceleration.

    Strongly convex instances use the constant momentum
    ``(sqrt(kappa)-1)/(sqrt(kappa)+1)``; the smooth convex chain uses the
    ``t_{k+1} = (1 + sqrt(1 + 4 t_k^2))/2`` sequence.
    """
    engine = _engine(inst, part, budget, n)
    step = 1.0 / inst.smoothness if step_size is None else step_size
    strongly = inst.strong_convexity > 0
    if momentum is None and strongly:
        s = math.sqrt(inst.smoothness / inst.strong_convexity)
        momentum = (s - 1.0) / (s + 1.0)
    x = [np.zeros(s) for s in part.sizes]
    y = [np.zeros(s) for s in part.sizes]
    ix, iy = [0] * part.m, [0] * part.m
    t = [1.0]

    def round_fn(k):
        if momentum is not None:
            beta = momentum
        else:
            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t[0] * t[0])) / 2.0
            beta = (t[0] - 1.0) / t_next
            t[0] = t_next
        views = _boundary_exchange(engine, y)
        at = dict(enumerate(iy))
        for j in range(part.m):
            g = block_gradient(inst, part, j, views[j]).values
            xj = y[j] - step * g
            ixj = _keep(engine, j, xj, [copy_of(iy[j]), gradient_at(at)])
            yj = xj + beta * (xj - x[j])
            iyj = _keep(engine, j, yj, [copy_of(ixj), copy_of(ix[j])])
            x[j], ix[j], y[j], iy[j] = xj, ixj, yj, iyj
        for j in range(part.m):
            engine.broadcast(j, BlockVector(j, y[j]))
        return True

    return _run("dist-agd", engine, eps, max_rounds, round_fn, lambda: part.join(x), stop, keep_iterates)


def dist_cg(inst: Instance, part: Partition, eps: float, budget: Budget | None = None,
            max_rounds: int = 20000, n: int | None = None, stop: bool = True,
            keep_iterates: bool = False) -> Trace:
    """Distributed conjugate gradient on ``H w = b``.

    Round 1 forms the residual ``r = -f'(0)``.  Every later round: one
    ReduceAll of boundary coordinates of the search direction for the
    Hessian-vector product, two scalar ReduceAlls for the inner products,
    three audited additions (iterate, residual, direction) and one broadcast.
    """
    engine = _engine(inst, part, budget, n)
    m = part.m
    x = [np.zeros(s) for s in part.sizes]
    r, p = [None] * m, [None] * m
    ix, ir, ip = [0] * m, [0] * m, [0] * m
    rr = [0.0]

    def first_round():
        for j in range(m):
            rj = -block_gradient(inst, part, j, np.zeros(part.dim)).values
            ir[j] = ip[j] = _keep(engine, j, rj, [gradient_at({})])
            r[j] = p[j] = rj
        rr[0] = engine.reduce_all([rj @ rj for rj in r], "sum")
        for j in range(m):
            engine.broadcast(j, BlockVector(j, p[j]))
        return True

    def round_fn(k):
        if k == 1:
            return first_round()
        if rr[0] == 0.0:
            return False
        views = _boundary_exchange(engine, p)
        hp = [tri_rows(inst.hessian_diag, inst.hessian_off, views[j], b.start, b.stop)
              for j, b in enumerate(part.blocks)]
        curv = engine.reduce_all([p[j] @ hp[j] for j in range(m)], "sum")
        if not curv > 0.0:
            return False
        alpha = rr[0] / curv
        prev_ip = list(ip)
        for j in range(m):
            xj = x[j] + alpha * p[j]
            ix[j] = _keep(engine, j, xj, [copy_of(ix[j]), copy_of(ip[j])])
            x[j] = xj
            rj = r[j] - alpha * hp[j]
            prov = [copy_of(ir[j]), diag_hessian(ip[j])]
            prov += [cross_hessian(i, prev_ip[i]) for i in (j - 1, j + 1) if 0 <= i < m]
            ir[j] = _keep(engine, j, rj, prov)
            r[j] = rj
        rr_new = engine.reduce_all([rj @ rj for rj in r], "sum")
        beta = rr_new / rr[0]
        rr[0] = rr_new
        for j in range(m):
            pj = r[j] + beta * p[j]
            ip[j] = _keep(engine, j, pj, [copy_of(ir[j]), copy_of(ip[j])])
            p[j] = pj
        for j in range(m):
            engine.broadcast(j, BlockVector(j, p[j]))
        return True

    return _run("dist-cg", engine, eps, max_rounds, round_fn, lambda: part.join(x), stop, keep_iterates)


def dist_incremental(inst: IncSeparableInstance, part: Partition, eps: float, budget: Budget | None = None,
                     max_rounds: int = 20000, seed: int = 0, step_size: float | None = None,
                     samples_per_round: int = 1, epoch: int | None = None, stop: bool = True,
                     keep_iterates: bool = False) -> Trace:
    """SVRG-style incremental method, run independently on every machine.

    A machine first accumulates the full local gradient at its snapshot,
    one sampled component per addition, then takes ``epoch`` variance-reduced
    steps on uniformly sampled local components.  Each addition touches a
    single component, so every step is one audited sample access.
    """
    if not isinstance(inst, IncSeparableInstance):
        raise TypeError("dist_incremental needs an IncSeparableInstance")
    if part != equal_partition(inst.dim, inst.machines):
        raise ValueError("partition must be the equal split matching the instance's machines")
    m, N = part.m, inst.per_machine
    if samples_per_round < 1:
        raise ValueError("samples_per_round must be positive")
    comp_smooth = inst.smoothness  # each component is a (1/m)-scaled chain term
    eta = 1.0 / (4.0 * N * comp_smooth) if step_size is None else step_size
    epoch = 2 * N if epoch is None else epoch
    # the snapshot and its accumulated gradient stay referenced for a whole epoch
    engine = Engine(inst, part, budget, family="I", retain=(N + epoch) // samples_per_round + 2)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(m)]
    w = [np.zeros(s) for s in part.sizes]
    st = [dict(iw=0, isnap=0, snap=np.zeros(s), imu=0, mu=np.zeros(s), phase="snapshot", t=0)
          for s in part.sizes]

    def local_grad(l, j, vec):
        full = np.zeros(part.dim)
        b = part.block(j)
        full[b.start:b.stop] = vec
        return inst.component_gradient(l, full)[b.start:b.stop]

    def step(j):
        s = st[j]
        base = j * N
        if s["phase"] == "snapshot":
            if s["t"] == 0:
                s["isnap"], s["snap"] = s["iw"], w[j].copy()
                s["imu"], s["mu"] = 0, np.zeros(part.sizes[j])
            l = base + s["t"]
            mu = s["mu"] + local_grad(l, j, s["snap"])
            s["imu"] = _keep(engine, j, mu, [copy_of(s["imu"]), sample_gradient(l, {j: s["isnap"]})])
            s["mu"] = mu
            s["t"] += 1
            if s["t"] == N:
                s["phase"], s["t"] = "inner", 0
            return
        l = base + int(rngs[j].integers(N))
        v = N * (local_grad(l, j, w[j]) - local_grad(l, j, s["snap"])) + s["mu"]
        wj = w[j] - eta * v
        s["iw"] = _keep(engine, j, wj, [copy_of(s["iw"]), copy_of(s["imu"]),
                                        sample_gradient(l, {j: s["iw"]}),
                                        sample_gradient(l, {j: s["isnap"]})])
        w[j] = wj
        s["t"] += 1
        if s["t"] == epoch:
            s["phase"], s["t"] = "snapshot", 0

    def round_fn(k):
        for j in range(m):
            for _ in range(samples_per_round):
                step(j)
        engine.communication_phase()
        return True

    return _run("dist-incremental", engine, eps, max_rounds, round_fn, lambda: part.join(w), stop, keep_iterates)


@dataclass
class IncrementalSummary:
    mean_gaps: np.ndarray
    rounds_to_eps: int | None
    traces: list[Trace]

    @property
    def valid(self) -> bool:
        return all(t.valid for t in self.traces)


def incremental_expectation(inst: IncSeparableInstance, part: Partition, eps: float, seeds: int = 20,
                            budget: Budget | None = None, horizon: int = 1024, max_rounds: int = 200000,
                            **kwargs) -> IncrementalSummary:
    """Average ``dist_incremental`` gaps over ``seeds`` runs of equal length.

    The common horizon doubles until the mean gap reaches ``eps``.
    """
    while True:
        traces = [dist_incremental(inst, part, eps, budget, horizon, seed=s, stop=False, **kwargs)
                  for s in range(seeds)]
        mean = np.mean([t.gaps for t in traces], axis=0)
        hit = np.flatnonzero(mean <= eps)
        if hit.size or horizon >= max_rounds or not all(t.valid for t in traces):
            return IncrementalSummary(mean, int(hit[0]) if hit.size else None, traces)
        horizon = min(2 * horizon, max_rounds)


def run_solver(spec: SolverSpec, inst: Instance, part: Partition, eps: float,
               budget: Budget | None = None, n: int | None = None, **kwargs) -> Trace:
    """Dispatch on ``spec.name``."""
    if spec.name == "dist-gd":
        return dist_gd(inst, part, eps, budget, spec.max_rounds, spec.step_size, n=n, **kwargs)
    if spec.name == "dist-agd":
        return dist_agd(inst, part, eps, budget, spec.max_rounds, spec.step_size, spec.momentum, n=n, **kwargs)
    if spec.name == "dist-cg":
        return dist_cg(inst, part, eps, budget, spec.max_rounds, n=n, **kwargs)
    if spec.name == "inject-stub":
        return inject_stub(inst, part, eps, budget, spec.max_rounds, n=n, **kwargs)
    return dist_incremental(inst, part, eps, budget, spec.max_rounds, spec.seed, spec.step_size, **kwargs)
