import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from featround.blockview import (
    BlockVector, block_gradient, equal_partition, hessian_cross_apply, hessian_diag_apply, make_partition,
)
from featround.hardfunc import eval_gradient, make_inc_instance, make_nsc_instance, make_sc_instance


def test_partition_blocks():
    p = make_partition(6, [2, 2, 2])
    assert p.blocks == [range(0, 2), range(2, 4), range(4, 6)]
    assert make_partition(5, [3, 2]).blocks == [range(0, 3), range(3, 5)]
    assert equal_partition(6, 3) == p
    assert [p.owner(c) for c in range(6)] == [0, 0, 1, 1, 2, 2]


@pytest.mark.parametrize("sizes", [[3, 3], [5, 0], [2, 2]])
def test_partition_rejects_bad_sizes(sizes):
    with pytest.raises(ValueError):
        make_partition(5, sizes)


def test_equal_partition_needs_divisibility():
    with pytest.raises(ValueError):
        equal_partition(7, 2)


def test_block_gradient_examples():
    inst = make_sc_instance(1, 9, 6)
    p = make_partition(6, [3, 3])
    np.testing.assert_array_equal(block_gradient(inst, p, 0, np.zeros(6)).values, [-2, 0, 0])
    np.testing.assert_array_equal(block_gradient(inst, p, 1, np.zeros(6)).values, [0, 0, 0])
    e3 = np.eye(6)[2]
    np.testing.assert_array_equal(block_gradient(inst, p, 1, e3).values, [-2, 0, 0])
    with pytest.raises(ValueError):
        block_gradient(inst, p, 2, np.zeros(6))
    with pytest.raises(ValueError):
        block_gradient(inst, p, 0, np.zeros(5))


def test_hessian_diag_examples():
    inst = make_sc_instance(1, 9, 6)
    p = make_partition(6, [3, 3])
    out = hessian_diag_apply(inst, p, 0, BlockVector(0, np.array([1.0, 0, 0])))
    np.testing.assert_array_equal(out.values, [5, -2, 0])
    out = hessian_diag_apply(inst, p, 0, BlockVector(0, np.array([0, 1.0, 0])), np.ones(3))
    np.testing.assert_array_equal(out.values, [-2, 6, -2])
    np.testing.assert_array_equal(hessian_diag_apply(inst, p, 1, BlockVector(1, np.zeros(3))).values, 0)
    with pytest.raises(ValueError):
        hessian_diag_apply(inst, p, 0, BlockVector(1, np.zeros(3)))
    with pytest.raises(ValueError):
        hessian_diag_apply(inst, p, 0, BlockVector(0, np.zeros(3)), np.ones(2))


def test_hessian_cross_examples():
    inst = make_sc_instance(1, 9, 6)
    p = make_partition(6, [3, 3])
    out = hessian_cross_apply(inst, p, 0, 1, BlockVector(1, np.array([1.0, 0, 0])))
    np.testing.assert_array_equal(out.values, [0, 0, -2])
    out = hessian_cross_apply(inst, p, 1, 0, BlockVector(0, np.array([0, 0, 1.0])))
    np.testing.assert_array_equal(out.values, [-2, 0, 0])
    p3 = make_partition(6, [2, 2, 2])
    out = hessian_cross_apply(inst, p3, 0, 2, BlockVector(2, np.array([3.0, 4.0])))
    np.testing.assert_array_equal(out.values, [0, 0])
    with pytest.raises(ValueError):
        hessian_cross_apply(inst, p, 0, 0, BlockVector(0, np.zeros(3)))


def random_partition(draw_sizes, d):
    cuts = sorted(set(draw_sizes))
    edges = [0] + [c for c in cuts if 0 < c < d] + [d]
    return make_partition(d, np.diff(edges).tolist())


@settings(max_examples=40, deadline=None)
@given(d=st.integers(2, 80), cuts=st.lists(st.integers(1, 79), max_size=6), seed=st.integers(0, 10**6),
       kind=st.sampled_from(["sc", "nsc"]))
def test_block_gradients_reassemble_bitwise(d, cuts, seed, kind):
    inst = make_sc_instance(1.3, 17, d) if kind == "sc" else make_nsc_instance(2.5, d)
    part = random_partition(cuts, d)
    w = np.random.default_rng(seed).standard_normal(d)
    joined = part.join([block_gradient(inst, part, j, w).values for j in range(part.m)])
    assert np.array_equal(joined, eval_gradient(inst, w))


@settings(max_examples=30, deadline=None)
@given(d=st.integers(2, 60), cuts=st.lists(st.integers(1, 59), max_size=5), seed=st.integers(0, 10**6))
def test_blocks_match_dense_hessian_slices(d, cuts, seed):
    inst = make_sc_instance(0.8, 40, d)
    H = inst.dense_hessian()
    part = random_partition(cuts, d)
    rng = np.random.default_rng(seed)
    for j, rj in enumerate(part.blocks):
        v = rng.standard_normal(len(rj))
        D = rng.standard_normal(len(rj))
        expect = H[rj.start:rj.stop, rj.start:rj.stop] @ v + D * v
        got = hessian_diag_apply(inst, part, j, BlockVector(j, v), D).values
        np.testing.assert_allclose(got, expect, atol=1e-12)
        for i, ri in enumerate(part.blocks):
            if i == j:
                continue
            vi = rng.standard_normal(len(ri))
            expect = H[rj.start:rj.stop, ri.start:ri.stop] @ vi
            got = hessian_cross_apply(inst, part, j, i, BlockVector(i, vi)).values
            np.testing.assert_allclose(got, expect, atol=1e-12)
            if abs(i - j) > 1:
                assert not got.any()


def test_incremental_cross_blocks_vanish():
    inst = make_inc_instance(1, 9, 24, 3, 6)
    part = equal_partition(24, 3)
    for j in range(3):
        for i in range(3):
            if i != j:
                out = hessian_cross_apply(inst, part, j, i, BlockVector(i, np.ones(8)))
                assert not out.values.any()
