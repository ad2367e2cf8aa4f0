import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xrsim import kernels
from xrsim.errors import InvalidArgument
from xrsim.motion import InterpKind, JointWeights
from xrsim.recon import (
    ReceivedStore, build_schedule, causal_interpolate, joint_error,
    slot_cost, slot_exec_indices,
)


def test_schedule_oracles():
    s = build_schedule([0.0, 30.0, 120.0], 3, 0.2)
    assert s.count(0) == 0
    assert s.count(1) == 6 and np.allclose(np.diff(s.times[1]), 1 / 30)
    assert s.count(2) == 24
    assert np.all(s.times[2] >= 0.4) and np.all(s.times[2] < 0.6)


def test_interp_fallback_and_knots():
    st_ = ReceivedStore(np.array([5.0, -1.0]))
    assert np.array_equal(causal_interpolate(st_, 0.3), [5.0, -1.0])
    st_.add(0, [0.0, 0.1], [1.0, 3.0])
    for kind in InterpKind:
        assert causal_interpolate(st_, 0.1, kind)[0] == 3.0
        assert causal_interpolate(st_, 0.0, kind)[0] == 1.0
    assert causal_interpolate(st_, 0.15, InterpKind.ZOH)[0] == 3.0
    assert causal_interpolate(st_, 0.3, InterpKind.ZOH)[1] == -1.0


def test_linear_extrapolation_clamp():
    s = ReceivedStore(np.zeros(1))
    s.add(0, [0.0, 0.1], [0.0, 1.0])
    assert causal_interpolate(s, 0.15)[0] == pytest.approx(1.5)
    # held beyond two sample periods past the last sample
    assert causal_interpolate(s, 0.5)[0] == pytest.approx(3.0)


def test_store_rejects_out_of_order():
    s = ReceivedStore(np.zeros(1))
    s.add(0, [0.1], [1.0])
    with pytest.raises(InvalidArgument):
        s.add(0, [0.1], [2.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_causality(seed, when):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.choice(np.arange(40) / 40.0, size=12, replace=False))
    v = rng.standard_normal(12)
    a = ReceivedStore(np.zeros(1)); a.add(0, t, v)
    v2 = v.copy(); v2[t > when] += 100.0
    b = ReceivedStore(np.zeros(1)); b.add(0, t, v2)
    for kind in InterpKind:
        assert causal_interpolate(a, when, kind)[0] == causal_interpolate(b, when, kind)[0]


def test_joint_error_oracles():
    w = JointWeights(np.array([1.0, 3.0]))
    assert joint_error([2.0, 0.0], [0.0, 0.0], w) == 1.0
    assert joint_error([1.0, 2.0], [1.0, 2.0], w) == 0.0
    assert joint_error([0.7], [0.0], JointWeights.uniform(1)) == pytest.approx(0.7)
    with pytest.raises(InvalidArgument):
        joint_error([1.0], [1.0], np.zeros(1))


def test_slot_cost_oracles():
    assert len(slot_exec_indices(1, 1 / 30, 0.2)) == 6
    assert len(slot_exec_indices(7, 1 / 120, 0.2)) == 24
    assert slot_cost([1, 2, 3, 4, 5, 6], 1, 1 / 30, 0.2) == 3.5
    assert slot_cost(np.full(24, 0.3), 2, 1 / 30, 0.2) == pytest.approx(0.3)


def test_exec_indices_partition():
    seen = np.concatenate([list(slot_exec_indices(t, 1 / 30, 0.2)) for t in range(1, 51)])
    assert np.array_equal(seen, np.arange(300))


def test_snapshot_is_independent():
    s = ReceivedStore(np.zeros(2)); s.add(0, [0.0], [1.0])
    snap = s.snapshot(); s.add(0, [0.1], [2.0])
    assert snap.count(0) == 1 and s.count(0) == 2


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_backend_parity_interp(rng):
    J, n = 5, 40
    times = np.sort(rng.uniform(0, 4, (J, n)), axis=1)
    vals = rng.standard_normal((J, n))
    counts = rng.integers(0, n + 1, J)
    init = rng.standard_normal(J)
    inst = np.linspace(0, 4.5, 300)
    for kind in (kernels.ZOH, kernels.LINEAR):
        a = kernels.causal_interp(times, vals, counts, init, inst, kind, backend="cython")
        b = kernels.causal_interp(times, vals, counts, init, inst, kind, backend="python")
        assert np.allclose(a, b, rtol=0, atol=1e-12)
