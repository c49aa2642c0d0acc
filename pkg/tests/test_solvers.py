import math

import numpy as np
import pytest

from featround import bounds
from featround.blockview import equal_partition, make_partition
from featround.bspsim import Budget
from featround.hardfunc import make_inc_instance, make_nsc_instance, make_sc_instance
from featround.solvers import (
    SolverSpec, dist_agd, dist_cg, dist_gd, dist_incremental, incremental_expectation, inject_stub,
    run_solver,
)


def test_gd_meets_classical_ceiling():
    inst = make_sc_instance(1, 9, 100)
    tr = dist_gd(inst, equal_partition(100, 1), 1e-6)
    assert tr.valid and tr.rounds_to_eps is not None
    assert tr.rounds_to_eps <= math.ceil(9 * math.log(0.5 / 1e-6)) == 119
    assert all(r.support_max <= r.round for r in tr.rows)


def test_gd_partition_invariance():
    inst = make_sc_instance(1, 9, 100)
    a = dist_gd(inst, make_partition(100, [50, 50]), 1e-6, keep_iterates=True)
    b = dist_gd(inst, make_partition(100, [100]), 1e-6, keep_iterates=True)
    assert len(a.iterates) == len(b.iterates)
    for u, v in zip(a.iterates, b.iterates):
        np.testing.assert_allclose(u, v, rtol=0, atol=1e-12)


def test_agd_partition_invariance_bitwise():
    inst = make_sc_instance(1, 9, 60)
    a = dist_agd(inst, make_partition(60, [13, 20, 27]), 1e-8, keep_iterates=True)
    b = dist_agd(inst, equal_partition(60, 1), 1e-8, keep_iterates=True)
    assert all(np.array_equal(u, v) for u, v in zip(a.iterates, b.iterates))


def test_agd_round_window():
    inst = make_sc_instance(1, 9, 200)
    tr = dist_agd(inst, equal_partition(200, 4), 1e-6)
    ns = 1 / 3
    upper = 2 * 3 * math.log((1 + 9) * ns / 1e-6)
    assert 6 <= tr.rounds_to_eps <= upper
    assert tr.rounds_to_eps >= math.ceil(bounds.rounds_lb_sc(1, 9, ns, 1e-6))


def test_agd_nsc_converges():
    inst = make_nsc_instance(4, 60)
    tr = dist_agd(inst, equal_partition(60, 3), 1e-3)
    assert tr.valid and tr.rounds_to_eps is not None
    assert all(r.gap >= r.lb_gap - 1e-15 for r in tr.rows)


def test_cg_finite_termination_and_support():
    inst = make_sc_instance(1, 9, 60)
    tr = dist_cg(inst, equal_partition(60, 3), 1e-10)
    assert tr.valid and tr.rounds_to_eps <= 60
    assert bounds.check_trace_envelope(tr, 60) is None


def test_cg_stays_within_collective_budget():
    inst = make_sc_instance(1, 9, 40)
    tr = dist_cg(inst, equal_partition(40, 4), 1e-10)
    assert all(r.reduceall_count <= 4 and r.broadcast_count <= 4 for r in tr.ledger)


@pytest.mark.parametrize("solver", ["dist-gd", "dist-agd", "dist-cg"])
@pytest.mark.parametrize("inst", [make_sc_instance(1, 9, 48), make_sc_instance(0.3, 150, 48),
                                  make_nsc_instance(4, 48), make_inc_instance(1, 9, 48, 2, 8)],
                         ids=["sc9", "sc150", "nsc", "inc"])
def test_in_class_solvers_are_audit_clean(solver, inst):
    tr = run_solver(SolverSpec(solver, max_rounds=60), inst, equal_partition(48, 2), 1e-9)
    assert tr.valid and not tr.rejections and tr.status == "ok"
    assert all(r.gap >= -1e-14 for r in tr.rows)


@pytest.mark.parametrize("solver", [dist_gd, dist_agd, dist_cg])
@pytest.mark.parametrize("kappa", [2, 9, 100])
def test_tail_bound_holds_for_every_solver(solver, kappa):
    d = 80
    inst = make_sc_instance(1, kappa, d)
    tr = solver(inst, equal_partition(d, 4), 1e-13, max_rounds=d)
    for r in tr.rows:
        assert r.gap >= bounds.gap_tail_sc(1, kappa, d, r.round) * (1 - 1e-9)
        assert r.support_max <= r.round


def test_gd_budget_violation_marks_trace():
    inst = make_sc_instance(1, 9, 20)
    tr = dist_gd(inst, equal_partition(20, 2), 1e-6, Budget(broadcast_vecs_per_round=0))
    assert tr.status == "budget" and not tr.valid


def test_inject_stub_is_caught():
    inst = make_sc_instance(1, 9, 20)
    tr = inject_stub(inst, equal_partition(20, 2), 1e-6, max_rounds=5)
    assert not tr.valid and tr.rejections[0][:2] == (1, 1)
    assert bounds.check_trace_envelope(tr, 20) == 1


def test_boundary_exchange_needs_payload_room():
    inst = make_sc_instance(1, 9, 20)
    with pytest.raises(ValueError):
        dist_gd(inst, equal_partition(20, 4), 1e-6, n=6)


def test_trace_csv_columns():
    tr = dist_gd(make_sc_instance(1, 9, 10), equal_partition(10, 2), 1e-3)
    lines = tr.to_csv("config_hash=x").splitlines()
    assert lines[0] == "# config_hash=x"
    assert lines[1] == "round,gap,lb_gap,support_max,bytes_comp,bytes_comm,valid"
    assert len(lines) == 2 + len(tr.rows)


def test_solver_spec_round_trip():
    spec = SolverSpec("dist-agd", step_size=0.1, momentum=0.5, seed=3, max_rounds=9)
    assert SolverSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        SolverSpec("newton")


def test_incremental_rejects_bad_partition():
    inst = make_inc_instance(1, 9, 24, 2, 4)
    with pytest.raises(ValueError):
        dist_incremental(inst, make_partition(24, [8, 16]), 1e-4)
    with pytest.raises(TypeError):
        dist_incremental(make_sc_instance(1, 9, 24), equal_partition(24, 2), 1e-4)


def test_incremental_sample_accesses_within_budget():
    inst = make_inc_instance(1, 9, 48, 2, 8)
    budget = Budget(adds_per_round=3)
    tr = dist_incremental(inst, equal_partition(48, 2), 1e-4, budget, max_rounds=50, samples_per_round=3,
                          stop=False)
    assert tr.valid
    assert all(max(r.adds) <= 3 for r in tr.ledger)
    over = dist_incremental(inst, equal_partition(48, 2), 1e-4, budget, max_rounds=5, samples_per_round=4)
    assert over.status == "budget"


def test_incremental_pass_end_means_decrease():
    inst = make_inc_instance(1, 9, 240, 2, 8)
    summ = incremental_expectation(inst, equal_partition(240, 2), 1e-4, seeds=20, horizon=240)
    assert summ.valid
    per_pass = 3 * inst.per_machine  # snapshot accumulation plus 2N inner steps
    ends = summ.mean_gaps[::per_pass]
    assert np.all(np.diff(ends) < 0)


def test_incremental_seed_determinism():
    inst = make_inc_instance(1, 9, 48, 2, 8)
    part = equal_partition(48, 2)
    a = dist_incremental(inst, part, 1e-4, seed=7, max_rounds=40)
    b = dist_incremental(inst, part, 1e-4, seed=7, max_rounds=40)
    assert a.to_csv() == b.to_csv()
    c = dist_incremental(inst, part, 1e-4, seed=8, max_rounds=40)
    assert a.to_csv() != c.to_csv()
