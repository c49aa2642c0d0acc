"""Bulk-synchronous round engine.

Each round is a computation phase (local work, budgeted Reduce/ReduceAll)
followed by a communication phase (budgeted broadcasts).  Broadcasts are
delivered at the round boundary.  Every vector a machine wants to keep is
submitted to :meth:`Engine.add`, which audits it against the declared
generators of the feasible-set rule before admitting it.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .blockview import BlockVector, Partition, block_gradient, hessian_cross_apply, hessian_diag_apply
from .hardfunc import IncSeparableInstance, Instance

log = logging.getLogger(__name__)

BYTES_PER_VALUE = 8
SPAN_RTOL = 1e-8
MAX_GENERATORS = 32

COPY = "copy-u_j"
PARTIAL_GRADIENT = "partial-gradient"
DIAG_HESSIAN = "diag-hessian-apply"
CROSS_HESSIAN = "cross-hessian-apply"
SAMPLE_GRADIENT = "incremental-sample"
KINDS = (COPY, PARTIAL_GRADIENT, DIAG_HESSIAN, CROSS_HESSIAN, SAMPLE_GRADIENT)

COMBINERS: dict[str, Callable] = {"sum": np.add, "min": np.minimum, "max": np.maximum}


class BudgetExceeded(RuntimeError):
    """A per-round communication or feasible-set budget was exceeded."""


class PhaseError(RuntimeError):
    """An operation was issued outside the phase that permits it."""


@dataclass(frozen=True)
class Budget:
    """Per-round limits; fixed for a whole run.

    Zero is allowed so that a configuration can forbid an operation
    outright (the run then fails its budget check).
    """

    reduceall_per_round: int = 4
    broadcast_vecs_per_round: int = 2
    adds_per_round: int = 4

    def __post_init__(self):
        for name in ("reduceall_per_round", "broadcast_vecs_per_round", "adds_per_round"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v}")

    def byte_cap(self, n: int, dim: int) -> int:
        """Upper bound on bytes one round may move: ``c (n + d) 8`` with explicit ``c``."""
        return BYTES_PER_VALUE * (self.reduceall_per_round * n + self.broadcast_vecs_per_round * dim)

    def to_dict(self) -> dict:
        return {"reduceall_per_round": self.reduceall_per_round,
                "broadcast_vecs_per_round": self.broadcast_vecs_per_round,
                "adds_per_round": self.adds_per_round}


@dataclass(frozen=True)
class Provenance:
    """One declared generator of a candidate vector.

    ``ref`` indexes the machine's own feasible set (the ``u_j`` of a copy,
    the ``v_j`` of a diagonal-Hessian product).  ``point`` maps machines to
    member indices and describes the evaluation point ``u``; machines left
    out contribute the zero member.  ``source`` is ``(i, index)`` of the
    ``v_i`` in a cross-Hessian product.
    """

    kind: str
    ref: int | None = None
    point: Mapping[int, int] | None = None
    source: tuple[int, int] | None = None
    diag: np.ndarray | None = None
    sample: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown provenance kind {self.kind!r}")


def copy_of(ref: int) -> Provenance:
    return Provenance(COPY, ref=ref)


def gradient_at(point: Mapping[int, int]) -> Provenance:
    return Provenance(PARTIAL_GRADIENT, point=dict(point))


def diag_hessian(ref: int, diag=None) -> Provenance:
    return Provenance(DIAG_HESSIAN, ref=ref, diag=diag)


def cross_hessian(i: int, ref: int) -> Provenance:
    return Provenance(CROSS_HESSIAN, source=(i, ref))


def sample_gradient(sample: int, point: Mapping[int, int]) -> Provenance:
    return Provenance(SAMPLE_GRADIENT, point=dict(point), sample=sample)


@dataclass(frozen=True)
class AuditResult:
    accepted: bool
    reason: str | None = None
    detail: str = ""
    residual: float = 0.0


@dataclass
class FeasibleSet:
    """Audited members of ``W_j``; member 0 is always the zero vector."""

    owner: int
    offset: int
    size: int
    members: dict[int, np.ndarray] = field(default_factory=dict)
    born: dict[int, int] = field(default_factory=dict)
    count: int = 0
    frontier: int = 0

    def __post_init__(self):
        if not self.members:
            self.members[0] = np.zeros(self.size)
            self.born[0] = 0
            self.count = 1

    def member(self, idx: int) -> np.ndarray:
        try:
            return self.members[idx]
        except KeyError:
            raise KeyError(f"machine {self.owner} has no live member {idx}") from None

    def admit(self, vec: np.ndarray, round_index: int) -> int:
        idx = self.count
        self.members[idx] = np.array(vec, dtype=float)
        self.born[idx] = round_index
        self.count += 1
        self.frontier = max(self.frontier, support_frontier(vec, self.offset))
        return idx

    def evict_before(self, round_index: int):
        for idx in [i for i, r in self.born.items() if i and r < round_index]:
            del self.members[idx]
            del self.born[idx]


def support_frontier(vec, offset: int = 0) -> int:
    """1-based global index of the last nonzero entry, 0 for the zero vector."""
    nz = np.flatnonzero(np.asarray(vec))
    return offset + int(nz[-1]) + 1 if nz.size else 0


@dataclass
class RoundLog:
    round: int
    reduceall_count: int = 0
    reduce_count: int = 0
    broadcast_count: int = 0
    bytes_comp: int = 0
    bytes_comm: int = 0
    budget_ok: bool = True
    adds: tuple[int, ...] = ()
    violations: list[str] = field(default_factory=list)

    @property
    def bytes_total(self) -> int:
        return self.bytes_comp + self.bytes_comm


LEDGER_COLUMNS = ("round", "reduceall_count", "broadcast_count", "bytes_comp", "bytes_comm", "budget_ok")


def ledger_csv(logs: Sequence[RoundLog], header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_COLUMNS)
    for r in logs:
        w.writerow([r.round, r.reduceall_count, r.broadcast_count, r.bytes_comp, r.bytes_comm, int(r.budget_ok)])
    return buf.getvalue()


class Engine:
    """Round clock, collectives, byte ledger and feasible-set audit.

    ``family`` selects the update rule: ``"F"`` admits full-function
    oracles, ``"I"`` admits only gradients of one sampled component per
    addition.  ``n`` is the length of the sample-space vectors that
    Reduce/ReduceAll may carry.  ``retain`` (rounds) bounds how long
    members stay referenceable, which keeps long runs in bounded memory.
    """

    def __init__(self, inst: Instance, part: Partition, budget: Budget | None = None,
                 n: int | None = None, family: str = "F", retain: int | None = None):
        if part.dim != inst.dim:
            raise ValueError(f"partition dim {part.dim} != instance dim {inst.dim}")
        if family not in ("F", "I"):
            raise ValueError(f"family must be 'F' or 'I', got {family!r}")
        if family == "I" and not isinstance(inst, IncSeparableInstance):
            raise ValueError("the incremental family needs a component-structured instance")
        self.inst = inst
        self.part = part
        self.budget = budget or Budget()
        if n is None:
            n = inst.samples if isinstance(inst, IncSeparableInstance) else 2 * part.m
        if n < 1:
            raise ValueError("payload length n must be positive")
        self.n = int(n)
        self.family = family
        self.retain = retain
        self.sets = [FeasibleSet(j, part.offsets[j], part.sizes[j]) for j in range(part.m)]
        self.snapshot = [1] * part.m
        self.inbox: list[list[np.ndarray]] = [[] for _ in range(part.m)]
        self.logs: list[RoundLog] = []
        self.rejections: list[tuple[int, int, AuditResult]] = []
        self.round = 0
        self._open: RoundLog | None = None
        self._phase = "idle"
        self._outbox: list[tuple[int, np.ndarray]] = []
        self._adds = [0] * part.m

    # -- round lifecycle -------------------------------------------------

    def begin_round(self) -> int:
        if self._open is not None:
            raise PhaseError(f"round {self.round} is still open")
        self.round += 1
        self._open = RoundLog(self.round)
        self._phase = "computation"
        self._outbox = []
        self._adds = [0] * self.part.m
        return self.round

    def _require_open(self) -> RoundLog:
        if self._open is None:
            raise PhaseError("no open round; call begin_round() first")
        return self._open

    def _violate(self, message: str):
        rl = self._require_open()
        rl.budget_ok = False
        rl.violations.append(message)
        log.info("round %d: %s", rl.round, message)
        raise BudgetExceeded(message)

    @property
    def valid(self) -> bool:
        return not self.rejections and all(r.budget_ok for r in self.logs)

    def finalize_round(self) -> RoundLog:
        """Seal the ledger, deliver broadcasts and rotate the snapshots."""
        rl = self._require_open()
        rl.adds = tuple(self._adds)
        self.inbox = [[] for _ in range(self.part.m)]
        for owner, vec in self._outbox:
            for j in range(self.part.m):
                if j != owner:
                    self.inbox[j].append(vec)
        self.snapshot = [fs.count for fs in self.sets]
        if self.retain is not None:
            for fs in self.sets:
                fs.evict_before(self.round - self.retain + 1)
        self.logs.append(rl)
        self._open = None
        self._phase = "idle"
        return rl

    # -- collectives -----------------------------------------------------

    def _combine(self, contributions, op):
        if len(contributions) != self.part.m:
            raise ValueError(f"expected {self.part.m} contributions, got {len(contributions)}")
        combine = COMBINERS[op] if isinstance(op, str) else op
        vals = [np.asarray(c, dtype=float) for c in contributions]
        shape = vals[0].shape
        if any(v.shape != shape for v in vals):
            raise ValueError("contributions have mismatched shapes")
        if len(shape) > 1 or (shape and shape[0] > self.n):
            raise ValueError(f"payload must be a scalar or a vector of length <= n={self.n}")
        out = vals[0].copy()
        for v in vals[1:]:
            out = combine(out, v)
        return out, (shape[0] if shape else 1) * BYTES_PER_VALUE

    def reduce_all(self, contributions, op="sum"):
        """Combine one payload per machine and hand the result to every machine."""
        rl = self._require_open()
        if self._phase != "computation":
            raise PhaseError("ReduceAll is only allowed in the computation phase")
        if rl.reduceall_count + rl.reduce_count >= self.budget.reduceall_per_round:
            self._violate(f"ReduceAll budget {self.budget.reduceall_per_round} exceeded")
        out, nbytes = self._combine(contributions, op)
        rl.reduceall_count += 1
        rl.bytes_comp += nbytes
        return float(out) if out.ndim == 0 else out

    def reduce(self, contributions, op="sum", root: int = 0):
        """Like :meth:`reduce_all` but only ``root`` learns the result."""
        rl = self._require_open()
        self.part.check_machine(root)
        if self._phase != "computation":
            raise PhaseError("Reduce is only allowed in the computation phase")
        if rl.reduceall_count + rl.reduce_count >= self.budget.reduceall_per_round:
            self._violate(f"Reduce budget {self.budget.reduceall_per_round} exceeded")
        out, nbytes = self._combine(contributions, op)
        rl.reduce_count += 1
        rl.bytes_comp += nbytes
        return float(out) if out.ndim == 0 else out

    def broadcast(self, j: int, vec: BlockVector):
        """Queue ``vec`` from machine ``j``; it is visible to others next round."""
        rl = self._require_open()
        self.part.check_machine(j)
        if vec.owner != j:
            raise ValueError(f"machine {j} cannot broadcast a vector owned by {vec.owner}")
        values = np.asarray(vec.values, dtype=float)
        if values.shape != (self.part.sizes[j],):
            raise ValueError(f"broadcast from machine {j} must have length {self.part.sizes[j]}")
        self._phase = "communication"
        sent = sum(1 for o, _ in self._outbox if o == j)
        if sent >= self.budget.broadcast_vecs_per_round:
            self._violate(f"machine {j} exceeded {self.budget.broadcast_vecs_per_round} broadcasts")
        self._outbox.append((j, values.copy()))
        rl.broadcast_count += 1
        rl.bytes_comm += values.size * BYTES_PER_VALUE

    def communication_phase(self):
        """Close the computation phase explicitly (no broadcast needed)."""
        self._require_open()
        self._phase = "communication"

    # -- feasible sets ---------------------------------------------------

    def member(self, j: int, idx: int) -> np.ndarray:
        return self.sets[j].member(idx)

    def _point(self, j: int, point: Mapping[int, int] | None) -> np.ndarray:
        u = np.zeros(self.part.dim)
        for i, idx in (point or {}).items():
            self.part.check_machine(i)
            self._check_ref(j, i, idx)
            r = self.part.block(i)
            u[r.start:r.stop] = self.sets[i].member(idx)
        return u

    def _check_ref(self, j: int, i: int, idx: int):
        limit = self.sets[i].count if i == j else self.snapshot[i]
        if not 0 <= idx < limit:
            when = "current" if i == j else "previous-round"
            raise _SnapshotViolation(f"member {idx} of machine {i} is not in its {when} feasible set")
        self.sets[i].member(idx)

    def _generator(self, j: int, p: Provenance) -> tuple[np.ndarray, int | None]:
        inst, part = self.inst, self.part
        if p.kind == COPY:
            self._check_ref(j, j, p.ref)
            return self.sets[j].member(p.ref), None
        if p.kind == SAMPLE_GRADIENT:
            if self.family != "I":
                raise _ClassViolation("sampled-component generators belong to the incremental family")
            u = self._point(j, p.point)
            r = part.block(j)
            return inst.component_gradient(p.sample, u)[r.start:r.stop], p.sample
        if self.family == "I":
            raise _ClassViolation(f"{p.kind} is not an incremental-family generator")
        if p.kind == PARTIAL_GRADIENT:
            return block_gradient(inst, part, j, self._point(j, p.point)).values, None
        if p.kind == DIAG_HESSIAN:
            self._check_ref(j, j, p.ref)
            v = BlockVector(j, self.sets[j].member(p.ref))
            return hessian_diag_apply(inst, part, j, v, p.diag).values, None
        i, idx = p.source
        if i == j:
            raise _ClassViolation("cross-Hessian generator must reference another machine")
        self._check_ref(j, i, idx)
        return hessian_cross_apply(inst, part, j, i, BlockVector(i, self.sets[i].member(idx))).values, None

    def audit_update(self, j: int, candidate, prov: Sequence[Provenance]) -> AuditResult:
        """Decide whether ``candidate`` may join ``W_j`` in the current round."""
        self._require_open()
        self.part.check_machine(j)
        c = np.asarray(candidate, dtype=float)
        if c.shape != (self.part.sizes[j],):
            raise ValueError(f"candidate for machine {j} must have length {self.part.sizes[j]}")
        if self._adds[j] >= self.budget.adds_per_round:
            return AuditResult(False, "budget", f"machine {j} exceeded {self.budget.adds_per_round} additions")
        if len(prov) > MAX_GENERATORS:
            return AuditResult(False, "span", f"more than {MAX_GENERATORS} declared generators")
        gens, samples = [], set()
        try:
            for p in prov:
                g, sample = self._generator(j, p)
                gens.append(g)
                if sample is not None:
                    samples.add(sample)
        except _SnapshotViolation as e:
            return AuditResult(False, "snapshot", str(e))
        except _ClassViolation as e:
            return AuditResult(False, "span", str(e))
        if len(samples) > 1:
            return AuditResult(False, "span", f"one addition may use one sampled component, got {sorted(samples)}")
        scale = 1.0 + float(np.linalg.norm(c))
        if gens:
            G = np.column_stack(gens)
            coef = np.linalg.lstsq(G, c, rcond=None)[0]
            residual = float(np.linalg.norm(G @ coef - c))
        else:
            residual = float(np.linalg.norm(c))
        if residual > SPAN_RTOL * scale:
            return AuditResult(False, "span", f"residual {residual:.3e} outside the declared span", residual)
        return AuditResult(True, residual=residual)

    def add(self, j: int, candidate, prov: Sequence[Provenance], enforce: bool = True) -> tuple[int | None, AuditResult]:
        """Audit and admit ``candidate`` into machine ``j``'s feasible set.

        Returns ``(member index, verdict)``.  A rejected candidate is
        recorded and not admitted, unless ``enforce`` is false: negative
        controls use that to model an algorithm that ignores the rule.
        Exceeding the addition budget raises :class:`BudgetExceeded`.
        """
        verdict = self.audit_update(j, candidate, prov)
        if verdict.reason == "budget":
            self._violate(verdict.detail)
        self._adds[j] += 1
        if not verdict.accepted:
            self.rejections.append((self.round, j, verdict))
            log.info("round %d machine %d: rejected (%s) %s", self.round, j, verdict.reason, verdict.detail)
            if enforce:
                return None, verdict
        return self.sets[j].admit(candidate, self.round), verdict

    def frontiers(self) -> tuple[int, ...]:
        return tuple(fs.frontier for fs in self.sets)


class _SnapshotViolation(Exception):
    pass


class _ClassViolation(Exception):
    pass
