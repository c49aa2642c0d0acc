import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from featround import bounds
from featround.bounds import (
    NSC_CONSTANT, SweepError, SweepReport, SweepRow, check_trace_envelope, envelope_after, gap_envelope_nsc,
    gap_lb_inc, gap_lb_sc, gap_lb_sc_geometric, gap_tail_sc, linear_fit, rounds_lb_inc, rounds_lb_nsc,
    rounds_lb_sc, run_sweep,
)
from featround.hardfunc import NscChainInstance, make_sc_instance
from featround.solvers import Trace, TraceRow


def test_envelope_after_examples():
    assert envelope_after(0, 10).frontier == 0
    assert envelope_after(3, 10).frontier == 3
    assert envelope_after(15, 10).frontier == 10
    with pytest.raises(ValueError):
        envelope_after(-1, 10)
    env = envelope_after(2, 4)
    assert env.contains([1, 2, 0, 0]) and not env.contains([0, 0, 1e-300, 0])


def synthetic(supports):
    return Trace("synthetic", 6, [TraceRow(k, 1.0, 0.0, s) for k, s in enumerate(supports)])


def test_check_trace_envelope_synthetic():
    assert check_trace_envelope(synthetic([(0, 0), (1, 0), (2, 0)]), 6) is None
    # machine 2 touches coordinate d1+1 = 4 at round 1
    assert check_trace_envelope(synthetic([(0, 0), (0, 4)]), 6) == 1
    assert check_trace_envelope(Trace("empty", 6), 6) is None
    # past d the envelope is vacuous
    assert check_trace_envelope(synthetic([(0, 0), (1, 0), (2, 0), (3, 9)]), 2) is None


def test_gap_lb_sc_examples():
    assert gap_lb_sc(1, 9, 1 / 3, 0) == pytest.approx(1 / 12, abs=1e-15)
    assert gap_lb_sc(1, 9, 1 / 3, 2) == pytest.approx(math.exp(-2) / 12, abs=1e-15)
    assert gap_lb_sc(1, 9, 1 / 3, 2) == pytest.approx(0.011277, abs=1e-6)
    vals = [gap_lb_sc(1, 9, 1 / 3, k) for k in range(50)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        gap_lb_sc(1, 1, 1, 0)
    with pytest.raises(ValueError):
        gap_lb_sc(1, 9, 1, -1)


def test_rounds_lb_sc_examples():
    assert rounds_lb_sc(1, 9, 1 / 3, 1e-6) == pytest.approx(0.5 * math.log((1 / 3) / 4e-6), rel=1e-12)
    assert rounds_lb_sc(1, 9, 1 / 3, 1e-6) == pytest.approx(5.665, abs=1e-3)
    assert rounds_lb_sc(1, 9, 1 / 3, 1 / 12) == 0.0
    assert rounds_lb_sc(1, 9, 1 / 3, 1.0) == 0.0
    with pytest.raises(ValueError):
        rounds_lb_sc(1, 9, 1 / 3, 0.0)


@settings(max_examples=100, deadline=None)
@given(kappa=st.floats(1.01, 1e5), lam=st.floats(1e-3, 10), ns=st.floats(1e-3, 10),
       eps_rel=st.floats(1e-12, 0.9))
def test_rounds_lb_sc_solves_geometric_bound(kappa, lam, ns, eps_rel):
    # below rounds_lb_sc the pre-relaxation bound is still above eps
    eps = eps_rel * lam * ns / (math.sqrt(kappa) + 1)
    r = rounds_lb_sc(lam, kappa, ns, eps)
    k = math.floor(r)
    assert gap_lb_sc_geometric(lam, kappa, ns, k) >= eps * (1 - 1e-9)


@pytest.mark.xfail(strict=True, reason="the closed-form gap and round bounds carry different constants "
                                       "((sqrt(k)+1)/4 vs (sqrt(k)-1)/4), so they are not inverses")
def test_rounds_lb_sc_is_exact_inverse_of_gap_lb_sc():
    ns, eps = 1 / 3, 1e-6
    k = math.ceil(rounds_lb_sc(1, 9, ns, eps))
    assert gap_lb_sc(1, 9, ns, k) <= eps * (1 + 1e-9)


def test_tail_bound_is_exact_envelope_minimum():
    # min over E_k of f - f* for the chain equals (lam/2) sum_{i>k} q^{2i}; check against a dense solve
    d, k = 12, 4
    inst = make_sc_instance(1.0, 9.0, d)
    H, b = inst.dense_hessian(), inst.linear
    w = np.zeros(d)
    w[:k] = np.linalg.solve(H[:k, :k], b[:k])
    exact = inst.gap(w)
    lam, q2 = 1.0, 0.25
    assert exact >= gap_tail_sc(1, 9, d, k) * (1 - 1e-12)
    assert gap_tail_sc(1, 9, d, k) == pytest.approx(0.5 * lam * sum(q2 ** i for i in range(k + 1, d + 1)))
    assert gap_tail_sc(1, 9, d, d) == 0.0


def test_closed_form_exceeds_tail_bound_for_large_k():
    # the relaxation q^{2k} <= exp(-4k/(sqrt(kappa)+1)) points the wrong way for a lower bound
    q = (3 - 1) / (3 + 1)
    for k in range(1, 40):
        assert q ** (2 * k) <= math.exp(-4 * k / 4)
    ns = 1 / 3
    assert gap_lb_sc(1, 9, ns, 10) > gap_tail_sc(1, 9, 200, 10)


def test_rounds_lb_nsc_examples():
    base = rounds_lb_nsc(4, 1, 1e-4)
    assert base == pytest.approx(math.sqrt(3 / 32) / 2 * math.sqrt(4e4), rel=1e-12)
    assert base == pytest.approx(30.6, abs=0.05)
    assert rounds_lb_nsc(4, 1, 1e-4 / 4) == pytest.approx(2 * base, rel=1e-12)
    assert rounds_lb_nsc(16, 1, 1e-4) == pytest.approx(2 * base, rel=1e-12)
    assert NSC_CONSTANT == pytest.approx(0.15309, abs=1e-5)
    with pytest.raises(ValueError):
        rounds_lb_nsc(0, 1, 1e-4)


def test_gap_envelope_nsc_matches_dense_solve():
    d, k = 15, 6
    inst = NscChainInstance(4.0, d)
    H, b = inst.dense_hessian(), inst.linear
    w = np.zeros(d)
    w[:k] = np.linalg.solve(H[:k, :k], b[:k])
    assert inst.gap(w) == pytest.approx(gap_envelope_nsc(4.0, d, k), rel=1e-10)


def test_inc_examples():
    assert rounds_lb_inc(1, 9, 4, 1 / 3, 1e-6) == pytest.approx(52 / 12 * math.log((1 / 3) / 4e-6), rel=1e-12)
    assert rounds_lb_inc(1, 9, 4, 1 / 3, 1e-6) == pytest.approx(49.1, abs=0.05)
    assert gap_lb_inc(1, 9, 4, 1 / 3, 0) == pytest.approx(1 / 12)
    assert rounds_lb_inc(1, 9, 4, 1 / 3, 1.0) == 0.0
    with pytest.raises(ValueError):
        gap_lb_inc(1, 9, 0, 1, 0)


def test_inc_rounds_scale_linearly_in_n():
    r = [rounds_lb_inc(1, 9, n, 1, 1e-6) for n in (1000, 2000, 4000)]
    assert r[1] / r[0] == pytest.approx(2, rel=1e-3)
    assert r[2] / r[1] == pytest.approx(2, rel=1e-3)


@settings(max_examples=200, deadline=None)
@given(kappa=st.floats(1.01, 1e5), lam=st.floats(1e-3, 10), ns=st.floats(1e-3, 10),
       n=st.integers(1, 10_000), eps_rel=st.floats(1e-12, 0.99))
def test_inc_pair_are_inverses(kappa, lam, ns, n, eps_rel):
    eps = eps_rel * lam * ns / 4
    k = rounds_lb_inc(lam, kappa, n, ns, eps)
    assert gap_lb_inc(lam, kappa, n, ns, k) == pytest.approx(eps, rel=1e-9)


def test_linear_fit_exact_line():
    a, b, r2 = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert (a, b, r2) == pytest.approx((2, 1, 1))


def test_short_grid_is_rejected():
    with pytest.raises(SweepError):
        run_sweep("kappa", [4, 16])
    with pytest.raises(SweepError):
        run_sweep("gamma", [1, 2, 3, 4])


def test_kappa_sweep_small():
    rep = run_sweep("kappa", [4, 9, 16, 25], "dist-agd", eps=1e-4)
    assert rep.fit_r2 >= 0.97
    assert all(r.rounds >= math.ceil(r.lb_rounds) for r in rep.rows)
    assert all(r.dim >= r.rounds + 16 for r in rep.rows)


def test_sweep_threads_env(monkeypatch):
    monkeypatch.setenv("FEATROUND_THREADS", "3")
    assert bounds._workers() == 3
    monkeypatch.setenv("FEATROUND_THREADS", "many")
    assert bounds._workers() == 1


def test_report_serialization():
    rows = [SweepRow(4.0, 10, 5.0, 40), SweepRow(16.0, 20, 0.0, 60)]
    rep = SweepReport("kappa", "dist-agd", rows, 1.0, 2.0, 0.995, "sqrt", {"nsc_constant": NSC_CONSTANT})
    lines = rep.to_csv("config_hash=h").splitlines()
    assert lines[:2] == ["# config_hash=h", "axis_value,rounds,lb_rounds,ratio,dim"]
    assert rows[0].ratio == 2.0
    data = json.loads(rep.to_json())
    assert {"fitSlope", "fitR2", "constants"} <= set(data)
