"""Compiled core vs pure-Python fallback: trajectories must match bitwise.

The fallback mirrors the compiled loops operation-for-operation, so any
drift here means the two implementations diverged.
"""

import numpy as np
import pytest

from potlatch.backend import get_core
from potlatch.engine import MASK_ALL, _build_actions, _kernel_tables
from potlatch.kernel import CompleteSpec, TorusSpec, build_kernel

compiled = get_core(False)
fallback = get_core(True)

pytestmark = pytest.mark.skipif(
    compiled.BACKEND_NAME != "compiled", reason="compiled core not built"
)


def _assert_same(a: dict, b: dict):
    assert set(a) == set(b)
    for key in a:
        if isinstance(a[key], float):
            assert a[key] == b[key], key
        else:
            assert np.array_equal(a[key], b[key]), key


def test_clock_events_bitwise():
    for replica in (0, 1, 17):
        t1, s1 = compiled.clock_events(987654321, replica, 7, 25.0, 100000)
        t2, s2 = fallback.clock_events(987654321, replica, 7, 25.0, 100000)
        assert np.array_equal(t1, t2)
        assert np.array_equal(s1, s2)


def test_stream_state_matches():
    assert compiled.stream_state(123, 45) == fallback.stream_state(123, 45)


@pytest.mark.parametrize("kind", [0, 1])
@pytest.mark.parametrize("spec", [TorusSpec(1, 5), CompleteSpec(3)])
def test_sim_batch_bitwise_all_accumulators(kind, spec):
    k = build_kernel(spec)
    tabs = _kernel_tables(k)
    mask = MASK_ALL if k.is_torus else (1 | 4 | 8 | 32 | 64)
    ts = np.array([0.0, 0.4, 1.1, 2.0])
    at, af = _build_actions(ts, False, None, 2.0)
    y0 = np.zeros(k.n_sites)
    y0[0] = 1.0
    iw = np.linspace(0.1, 0.4, 4)
    F = np.arange(4.0 * k.n_sites).reshape(4, k.n_sites)
    args = (kind, *tabs[:6], k.pi, tabs[6], tabs[7], y0, 0, 0.0, 0.0,
            at, af, 4, 2.0, 0, 40, 2024, mask, False, kind == 1,
            True, True, True, iw, F, True, True, 10**6)
    _assert_same(compiled.sim_batch(*args), fallback.sim_batch(*args))


@pytest.mark.parametrize("init_kind,a,b", [(1, 2.0, 0.0), (2, 3.0, 0.4),
                                           (3, 0.1, 0.6)])
def test_sim_batch_bitwise_iid_inits(init_kind, a, b):
    k = build_kernel(TorusSpec(1, 5))
    tabs = _kernel_tables(k)
    ts = np.array([0.0, 1.0])
    at, af = _build_actions(ts, False, None, 1.0)
    args = (1, *tabs[:6], k.pi, tabs[6], tabs[7], np.zeros(5), init_kind, a, b,
            at, af, 2, 1.0, 0, 30, 7, 1 | 32 | 64, False, False,
            True, True, False, None, None, False, True, 10**6)
    _assert_same(compiled.sim_batch(*args), fallback.sim_batch(*args))


def test_sim_batch_bitwise_deviation_mode():
    k = build_kernel(TorusSpec(1, 5))
    tabs = _kernel_tables(k)
    ts = np.array([0.0, 10.0, 40.0, 80.0])
    at, af = _build_actions(ts, True, 5.0, 80.0)
    y0 = np.zeros(5)
    y0[0] = 1.0
    args = (0, *tabs[:6], k.pi, tabs[6], tabs[7], y0, 0, 0.0, 0.0,
            at, af, 4, 80.0, 0, 25, 99, MASK_ALL, True, False,
            True, True, False, None, None, True, True, 10**6)
    _assert_same(compiled.sim_batch(*args), fallback.sim_batch(*args))


def test_dual_batch_bitwise():
    k = build_kernel(TorusSpec(1, 3))
    tabs = _kernel_tables(k)
    ts = np.array([0.0, 0.7, 2.0])
    x0 = np.array([1.0, 0.5, 0.0])
    args = (*tabs[:3], x0, ts, 0, 30, 55, True, True, True, True, 10**6)
    _assert_same(compiled.dual_batch(*args), fallback.dual_batch(*args))


def test_jacobi_bitwise():
    rng = np.random.default_rng(8)
    for n in (3, 7, 12):
        A = rng.normal(size=(n, n))
        A = A + A.T
        w1, v1, c1 = compiled.jacobi_eigh(A)
        w2, v2, c2 = fallback.jacobi_eigh(A)
        assert c1 == c2
        assert np.array_equal(w1, w2)
        assert np.array_equal(v1, v2)


def test_volterra_close():
    # fallback uses np.dot for inner sums: equal to rounding, not bitwise
    g = np.exp(-np.linspace(0.0, 4.0, 500))
    h = 4.0 / 499
    H1 = compiled.volterra_solve(g, h)
    H2 = fallback.volterra_solve(g, h)
    assert np.allclose(H1, H2, rtol=1e-12, atol=1e-15)
    c1 = compiled.conv_trapz(g, g, h)
    c2 = fallback.conv_trapz(g, g, h)
    assert np.allclose(c1, c2, rtol=1e-12, atol=1e-15)
