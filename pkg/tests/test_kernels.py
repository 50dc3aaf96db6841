import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonicpose import kernels

try:
    from sonicpose import _kernels as compiled
except ImportError:  # pragma: no cover
    compiled = None


def _inputs(seed, n):
    rng = np.random.default_rng(seed)
    accel = np.ascontiguousarray(rng.normal(0.0, 2.0, (n, 3)) + [0, 0, 9.80665])
    gyro = np.ascontiguousarray(rng.normal(0.0, 0.5, (n, 3)))
    dt = np.full(n, 0.005)
    zupt = (rng.random(n) < 0.1).astype(np.uint8)
    state = np.zeros(16)
    state[6] = 1.0
    state[10:16] = rng.normal(0.0, 0.05, 6)
    return state, accel, gyro, dt, zupt


def _run(fn, state, accel, gyro, dt, zupt, start, stop):
    s = state.copy()
    n = len(dt)
    p = np.zeros((n, 3))
    q = np.zeros((n, 4))
    bad = fn(s, accel, gyro, dt, zupt, p, q, start, stop)
    return s, p, q, bad


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(compiled is None, reason="compiled kernel not built")
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 400))
def test_compiled_matches_python_bit_for_bit(seed, n):
    args = _inputs(seed, n)
    a = _run(kernels.python_propagate, *args, 0, n)
    b = _run(compiled.propagate, *args, 0, n)
    assert a[3] == b[3]
    for x, y in zip(a[:3], b[:3]):
        assert np.array_equal(x, y)


@pytest.mark.skipif(compiled is None, reason="compiled kernel not built")
def test_non_finite_reported_by_both():
    state, accel, gyro, dt, zupt = _inputs(1, 50)
    zupt[:] = 0
    accel[17, 1] = np.nan
    for fn in (kernels.python_propagate, compiled.propagate):
        assert _run(fn, state, accel, gyro, dt, zupt, 0, 50)[3] == 17


def test_segmented_equals_single_pass():
    args = _inputs(3, 300)
    one = _run(kernels.propagate, *args, 0, 300)
    s = args[0].copy()
    p = np.zeros((300, 3))
    q = np.zeros((300, 4))
    for a, b in ((0, 100), (100, 250), (250, 300)):
        kernels.propagate(s, *args[1:], p, q, a, b)
    assert np.array_equal(s, one[0]) and np.array_equal(p, one[1])


def test_zupt_holds_position():
    state, accel, gyro, dt, zupt = _inputs(4, 20)
    state[3:6] = [1.0, 2.0, 3.0]
    zupt[:] = 1
    s, p, q, _ = _run(kernels.propagate, state, accel, gyro, dt, zupt, 0, 20)
    assert np.all(s[3:6] == 0.0) and np.all(p == 0.0)
