"""Worst-case quadratic instances and their closed-form minimizers.

Every instance is a quadratic ``f(w) = 0.5 w^T H w - b^T w`` whose Hessian is
symmetric tridiagonal (block-diagonal with tridiagonal blocks for the
separable incremental instance).  Matrices are stored implicitly as a
diagonal and an off-diagonal array; dense assembly exists only for small
test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.linalg import solveh_banded

DENSE_LIMIT = 200


def _corner(kappa: float) -> float:
    s = math.sqrt(kappa)
    return (s + 3.0) / (s + 1.0)


def q_ratio(kappa: float) -> float:
    """Smaller root of ``q^2 - 2(kappa+1)/(kappa-1) q + 1 = 0``."""
    s = math.sqrt(kappa)
    return (s - 1.0) / (s + 1.0)


def chain_matrix(dim: int, corner: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the (-1, 2, -1) chain with a custom last entry."""
    diag = np.full(dim, 2.0)
    diag[-1] = corner
    return diag, np.full(dim - 1, -1.0)


def tri_rows(diag, off, x, lo, hi):
    """Rows ``lo:hi`` of the tridiagonal product ``T x``.

    Every row is evaluated with the same operation order whatever the
    slice, so block-wise and global products agree bitwise.
    """
    y = diag[lo:hi] * x[lo:hi]
    if lo > 0:
        y += off[lo - 1:hi - 1] * x[lo - 1:hi - 1]
    else:
        y[1:] += off[lo:hi - 1] * x[lo:hi - 1]
    top = min(hi, len(x) - 1)
    if top > lo:
        y[:top - lo] += off[lo:top] * x[lo + 1:top + 1]
    return y


def _check_kappa_lambda(lam, kappa):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not kappa > 1:
        raise ValueError(f"kappa must exceed 1, got {kappa}")


def _check_dim(dim):
    if int(dim) != dim or dim < 2:
        raise ValueError(f"dim must be an integer >= 2, got {dim}")


class _Quadratic:
    """Shared evaluation code for the tridiagonal quadratics."""

    dim: int

    @property
    def hessian_diag(self) -> np.ndarray:
        return self._hess[0]

    @property
    def hessian_off(self) -> np.ndarray:
        return self._hess[1]

    def _check_point(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {w.shape}")
        return w

    def hess_vec(self, v, lo=0, hi=None):
        v = self._check_point(v)
        hi = self.dim if hi is None else hi
        return tri_rows(self.hessian_diag, self.hessian_off, v, lo, hi)

    def dense_hessian(self) -> np.ndarray:
        if self.dim > DENSE_LIMIT:
            raise ValueError(f"dense assembly is limited to dim <= {DENSE_LIMIT}")
        d, e = self._hess
        return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)

    def minimizer_point(self) -> np.ndarray:
        # banded Cholesky in upper form: row 0 holds the superdiagonal
        ab = np.zeros((2, self.dim))
        ab[0, 1:] = self.hessian_off
        ab[1] = self.hessian_diag
        return solveh_banded(ab, self.linear)

    def gap(self, w) -> float:
        """``f(w) - f*`` evaluated as ``0.5 e^T H e`` to avoid cancellation."""
        e = self._check_point(w) - self.wstar
        return 0.5 * float(e @ self.hess_vec(e))

    @cached_property
    def wstar(self) -> np.ndarray:
        if isinstance(self, NscChainInstance):
            return self.minimizer_point()
        return exact_minimizer(self).point


@dataclass(frozen=True)
class ScChainInstance(_Quadratic):
    """Strongly convex chain ``(lam(kappa-1)/4)(0.5 w^T A w - w(1)) + (lam/2)|w|^2``."""

    lam: float
    kappa: float
    dim: int

    def __post_init__(self):
        _check_kappa_lambda(self.lam, self.kappa)
        _check_dim(self.dim)

    kind = "sc"

    @property
    def coupling(self) -> float:
        return self.lam * (self.kappa - 1.0) / 4.0

    @property
    def strong_convexity(self) -> float:
        return self.lam

    @property
    def smoothness(self) -> float:
        return self.lam * self.kappa

    @cached_property
    def chain(self):
        return chain_matrix(self.dim, _corner(self.kappa))

    @cached_property
    def _hess(self):
        a_diag, a_off = self.chain
        c = self.coupling
        return c * a_diag + self.lam, c * a_off

    @cached_property
    def linear(self) -> np.ndarray:
        b = np.zeros(self.dim)
        b[0] = self.coupling
        return b

    def to_dict(self) -> dict:
        return {"kind": "sc", "lambda": self.lam, "kappa": self.kappa, "dim": self.dim}


@dataclass(frozen=True)
class NscChainInstance(_Quadratic):
    """Smooth convex chain ``(L/4)(0.5 w^T A0 w - scale * w(1))``.

    ``scale`` multiplies the minimizer; ``normalized`` picks it so that
    ``|w*| = 1``, which the epsilon sweep relies on.
    """

    smoothness: float
    dim: int
    scale: float = 1.0

    def __post_init__(self):
        if not self.smoothness > 0:
            raise ValueError(f"smoothness must be positive, got {self.smoothness}")
        _check_dim(self.dim)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    kind = "nsc"

    @classmethod
    def normalized(cls, smoothness: float, dim: int) -> "NscChainInstance":
        i = np.arange(1, dim + 1)
        unit = 1.0 - i / (dim + 1.0)
        return cls(smoothness, dim, 1.0 / float(np.linalg.norm(unit)))

    @property
    def strong_convexity(self) -> float:
        return 0.0

    @cached_property
    def _hess(self):
        a_diag, a_off = chain_matrix(self.dim)
        c = self.smoothness / 4.0
        return c * a_diag, c * a_off

    @cached_property
    def linear(self) -> np.ndarray:
        b = np.zeros(self.dim)
        b[0] = self.scale * self.smoothness / 4.0
        return b

    def to_dict(self) -> dict:
        out = {"kind": "nsc", "smoothness": self.smoothness, "dim": self.dim}
        if self.scale != 1.0:
            out["scale"] = self.scale
        return out


@dataclass(frozen=True)
class IncSeparableInstance(_Quadratic):
    """Separable instance ``(1/m) sum_j phi_j(w_j)``.

    Machine ``j`` owns ``samples/machines`` chain terms, each living on its
    own sub-block of ``subblock`` coordinates.  Component ``l`` (one per
    sample) is the chain term on sub-block ``l``, scaled by ``1/m``.
    """

    lam: float
    kappa: float
    dim: int
    machines: int
    samples: int

    def __post_init__(self):
        _check_kappa_lambda(self.lam, self.kappa)
        _check_dim(self.dim)
        m, n, d = self.machines, self.samples, self.dim
        if m < 1 or n < m:
            raise ValueError(f"need 1 <= machines <= samples, got m={m}, n={n}")
        if n % m:
            raise ValueError(f"machines ({m}) must divide samples ({n})")
        if d % m:
            raise ValueError(f"machines ({m}) must divide dim ({d})")
        if d % n:
            raise ValueError(f"block size {d // m} does not split into {n // m} equal sub-blocks")

    kind = "inc"

    @property
    def per_machine(self) -> int:
        return self.samples // self.machines

    @property
    def subblock(self) -> int:
        return self.dim // self.samples

    @property
    def coupling(self) -> float:
        return self.lam * (self.kappa - 1.0) / 4.0

    @property
    def strong_convexity(self) -> float:
        return self.lam / self.machines

    @property
    def smoothness(self) -> float:
        return self.lam * self.kappa / self.machines

    def component_range(self, sample: int) -> range:
        if not 0 <= sample < self.samples:
            raise ValueError(f"sample index {sample} out of range")
        p = self.subblock
        return range(sample * p, (sample + 1) * p)

    def component_owner(self, sample: int) -> int:
        return sample // self.per_machine

    @cached_property
    def _hess(self):
        p = self.subblock
        a_diag, a_off = chain_matrix(p, _corner(self.kappa))
        c, s = self.coupling, 1.0 / self.machines
        diag = np.tile(s * (c * a_diag + self.lam), self.samples)
        off = np.zeros(self.dim - 1)
        for l in range(self.samples):
            off[l * p:l * p + p - 1] = s * c * a_off
        return diag, off

    @cached_property
    def linear(self) -> np.ndarray:
        b = np.zeros(self.dim)
        b[::self.subblock] = self.coupling / self.machines
        return b

    def component_gradient(self, sample: int, w) -> np.ndarray:
        """Full-length gradient of component ``sample``; zero off its sub-block."""
        w = self._check_point(w)
        r = self.component_range(sample)
        g = np.zeros(self.dim)
        g[r.start:r.stop] = tri_rows(self.hessian_diag, self.hessian_off, w, r.start, r.stop) - self.linear[r.start:r.stop]
        return g

    def to_dict(self) -> dict:
        return {"kind": "inc", "lambda": self.lam, "kappa": self.kappa, "dim": self.dim,
                "machines": self.machines, "samples": self.samples}


Instance = Union[ScChainInstance, NscChainInstance, IncSeparableInstance]


@dataclass(frozen=True)
class Minimizer:
    point: np.ndarray
    norm_sq: float
    opt_value: float
    q: float


def make_sc_instance(lam: float, kappa: float, dim: int) -> ScChainInstance:
    return ScChainInstance(float(lam), float(kappa), int(dim))


def make_nsc_instance(smoothness: float, dim: int, scale: float = 1.0) -> NscChainInstance:
    return NscChainInstance(float(smoothness), int(dim), float(scale))


def make_inc_instance(lam: float, kappa: float, dim: int, machines: int, samples: int) -> IncSeparableInstance:
    return IncSeparableInstance(float(lam), float(kappa), int(dim), int(machines), int(samples))


def exact_minimizer(inst: ScChainInstance | IncSeparableInstance) -> Minimizer:
    """Closed-form minimizer: coordinates decay geometrically as ``q^i``.

    For the separable instance the pattern restarts on every sub-block.
    """
    q = q_ratio(inst.kappa)
    if isinstance(inst, ScChainInstance):
        length, copies = inst.dim, 1
    elif isinstance(inst, IncSeparableInstance):
        length, copies = inst.subblock, inst.samples
    else:
        raise TypeError(f"no closed form for {type(inst).__name__}")
    block = q ** np.arange(1, length + 1)
    point = np.tile(block, copies)
    norm_sq = copies * q * q * (1.0 - q ** (2 * length)) / (1.0 - q * q)
    opt = -copies * inst.lam * (inst.kappa - 1.0) / 8.0 * q
    if isinstance(inst, IncSeparableInstance):
        opt /= inst.machines
    return Minimizer(point, norm_sq, opt, q)


def eval_objective(inst: Instance, w) -> float:
    w = inst._check_point(w)
    return 0.5 * float(w @ inst.hess_vec(w)) - float(inst.linear @ w)


def eval_gradient(inst: Instance, w) -> np.ndarray:
    w = inst._check_point(w)
    return inst.hess_vec(w) - inst.linear


def optimal_value(inst: Instance) -> float:
    if isinstance(inst, NscChainInstance):
        w = inst.minimizer_point()
        return -0.5 * float(inst.linear @ w)
    return exact_minimizer(inst).opt_value


def instance_from_dict(data: dict) -> Instance:
    kind = data.get("kind")
    if kind == "sc":
        return make_sc_instance(data["lambda"], data["kappa"], data["dim"])
    if kind == "nsc":
        return make_nsc_instance(data["smoothness"], data["dim"], data.get("scale", 1.0))
    if kind == "inc":
        return make_inc_instance(data["lambda"], data["kappa"], data["dim"], data["machines"], data["samples"])
    raise ValueError(f"unknown instance kind {kind!r}")
