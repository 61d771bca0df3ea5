import math

import numpy as np
import pytest

from potlatch import CompleteSpec, TorusSpec, build_kernel, decompose
from potlatch.analysis import (
    EnvelopeParams,
    GridFunction,
    McEstimate,
    bonferroni_threshold,
    closed_form_w2_bound,
    compute_G,
    convolve_grid,
    coupling_w2_bound,
    envelope_global,
    envelope_torus,
    envelope_value,
    fit_envelope_amplitude,
    integral_check_G,
    local_corollary_check,
    normal_quantile,
    rate_fit,
    renewal_H,
    stability_step,
    w2_empirical_1d,
)
from potlatch.errors import (
    EmptySample,
    GridTooCoarse,
    HorizonTooShort,
    NonPositiveMean,
    TailTooFat,
)


# --- G ---

def test_g_at_zero_stencil_value():
    for d, n in [(1, 3), (1, 7), (2, 5), (3, 3)]:
        g = compute_G(d, n, horizon=0.5, h=0.01)
        assert abs(g.values[0] - (1 + 1 / (2 * d))) < 1e-12


def test_g_matches_direct_spectral_sum():
    # independent route: full n^d lattice sum over lambda_hat
    from potlatch.spectral import torus_gaps

    for d, n in [(1, 5), (2, 3), (2, 5)]:
        lam = torus_gaps(d, n).lambda_hat
        g = compute_G(d, n, horizon=2.0, h=0.05)
        for idx in (0, 10, 40):
            t = idx * 0.05
            direct = float(np.sum(lam**2 * np.exp(-2 * lam * t))) / n**d
            assert abs(g.values[idx] - direct) < 1e-13


def test_g_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        compute_G(1, 5, horizon=1.0, h=0.2)
    assert stability_step(1, 5) <= 0.05


def test_g_integral_one_half():
    for d, n in [(1, 5), (2, 5), (3, 3)]:
        gamma11 = 1 - math.cos(2 * math.pi / n)
        T = n * n + 40.0 * d / (2 * gamma11)
        g = compute_G(d, n, horizon=T, h=2.5e-4)
        assert abs(integral_check_G(g) - 0.5) < 1e-6


def test_g_integral_halving_step_stable():
    gamma11 = 1 - math.cos(2 * math.pi / 5)
    T = 25 + 40.0 / (2 * gamma11)
    a = integral_check_G(compute_G(1, 5, horizon=T, h=4e-4))
    b = integral_check_G(compute_G(1, 5, horizon=T, h=2e-4))
    assert abs(a - b) < 1e-7


def test_g_integral_requires_tail():
    g = compute_G(1, 5, horizon=1.0, h=0.01)
    g.tail_model = None
    with pytest.raises(ValueError):
        integral_check_G(g)


def test_g_late_time_slope():
    # log G slope ~ -2 gamma11 / d for t >= n^2
    d, n = 1, 5
    gamma11 = 1 - math.cos(2 * math.pi / n)
    g = compute_G(d, n, horizon=3 * n * n, h=0.01)
    t = g.times
    sel = t >= n * n
    slope = np.polyfit(t[sel], np.log(g.values[sel]), 1)[0]
    assert abs(slope + 2 * gamma11 / d) < 0.02 * 2 * gamma11 / d


# --- renewal ---

def test_renewal_first_point_and_domination():
    g = compute_G(1, 5, horizon=6.0, h=0.002)
    H = renewal_H(g)
    assert H.values[0] == g.values[0]
    assert np.all(H.values >= g.values - 1e-15)


def test_renewal_residual_is_tiny():
    from potlatch.backend import core

    g = compute_G(1, 5, horizon=4.0, h=0.005)
    H = renewal_H(g)
    conv = core.conv_trapz(np.ascontiguousarray(g.values),
                           np.ascontiguousarray(H.values), g.h)
    resid = np.abs(H.values - g.values - conv).max()
    assert resid <= 1e-8 * H.values.max()


def test_renewal_dominates_truncated_series():
    # H >= G + G*G + G*G*G at spot-checked grid points
    g = compute_G(1, 5, horizon=4.0, h=0.005)
    H = renewal_H(g)
    G2 = convolve_grid(g, g)
    G3 = convolve_grid(g, G2)
    partial = g.values + G2.values + G3.values
    for idx in (100, 400, 799):
        assert H.values[idx] >= partial[idx] - 1e-12


# --- envelopes ---

def test_envelope_global_examples():
    gamma2 = decompose(build_kernel(CompleteSpec(4))).gap_two_step
    assert abs(gamma2 - 1.0) < 1e-12
    env = envelope_global(gamma2, 0.5, horizon=2.0, h=0.5)
    assert env.values[0] == 0.5
    assert abs(env.values[-1] - 0.5 * math.exp(-2.0)) < 1e-15
    # T_3^1: V0 = 2/9, gamma2 = 3/4
    g2 = decompose(build_kernel(TorusSpec(1, 3))).gap_two_step
    env = envelope_global(g2, 2 / 9, horizon=1.0, h=1.0)
    assert abs(env.values[-1] - (2 / 9) * math.exp(-0.75)) < 1e-12


def test_envelope_torus_shapes():
    d, n = 1, 9
    ev = envelope_torus(d, n, "variance", EnvelopeParams(rate=0.0),
                        t0=1.0, horizon=60.0, h=1.0)
    t = ev.times
    pre = t < n * n
    slope = np.polyfit(np.log(t[pre][1:]), np.log(ev.values[pre][1:]), 1)[0]
    assert abs(slope + d / 2) < 1e-9
    en = envelope_torus(d, n, "energy", EnvelopeParams(rate=0.0),
                        t0=1.0, horizon=60.0, h=1.0)
    long = envelope_torus(d, n, "energy", EnvelopeParams(rate=0.0),
                          t0=1.0, horizon=200.0, h=1.0)
    sat = long.times > n * n
    assert np.allclose(long.values[sat], n ** (-d) * float(n) ** -(d + 2))
    # energy/variance ratio ~ 1/t before the crossover
    ratio = en.values[pre][1:] / ev.values[pre][1:]
    assert np.allclose(ratio, 1.0 / t[pre][1:], rtol=1e-12)


def test_envelope_avg_matches_energy_shape():
    a = envelope_value(1, 9, "avg", EnvelopeParams(rate=0.1), [2.0, 5.0])
    e = envelope_value(1, 9, "energy", EnvelopeParams(rate=0.1), [2.0, 5.0])
    assert np.array_equal(a, e)


def test_fit_envelope_amplitude_recovers():
    t = np.geomspace(2, 50, 20)
    params = EnvelopeParams(rate=0.05, amplitude=3.7)
    vals = envelope_value(1, 9, "variance", params, t)
    est = McEstimate(t, vals, 0.01 * vals, 1000)
    fit = fit_envelope_amplitude(est, 1, 9, "variance", rate=0.05)
    assert abs(fit.amplitude - 3.7) < 1e-9


# --- rate fit ---

def test_rate_fit_synthetic_poly_exp():
    rng = np.random.default_rng(1)
    t = np.geomspace(5, 80, 30)
    truth = 2.0 * t**-1.5 * np.exp(-0.2 * t)
    mean = truth * (1 + 0.004 * rng.standard_normal(30))
    fit = rate_fit(McEstimate(t, mean, 0.004 * truth, 10_000), (5, 80))
    assert abs(fit["exp_rate"] - 0.2) < 3 * fit["se_exp_rate"] + 0.002
    assert abs(fit["poly_exponent"] + 1.5) < 3 * fit["se_poly_exponent"] + 0.02


def test_rate_fit_constant_data():
    t = np.linspace(1, 10, 10)
    fit = rate_fit(McEstimate(t, np.ones(10), np.full(10, 1e-3), 100), (1, 10))
    assert abs(fit["exp_rate"]) < 1e-9
    assert abs(fit["poly_exponent"]) < 1e-9


def test_rate_fit_pure_exponential():
    t = np.geomspace(1, 30, 25)
    mean = np.exp(-0.7 * t)
    fit = rate_fit(McEstimate(t, mean, 1e-4 * mean, 1000), (1, 30))
    assert abs(fit["exp_rate"] - 0.7) < 0.007


def test_rate_fit_errors():
    t = np.linspace(1, 10, 10)
    with pytest.raises(NonPositiveMean):
        rate_fit(McEstimate(t, np.linspace(1, -1, 10), np.ones(10), 100), (1, 10))
    with pytest.raises(ValueError):
        rate_fit(McEstimate(t[:3], np.ones(3), np.ones(3), 100), (1, 10))


# --- Wasserstein ---

def test_w2_identical_samples():
    a = np.array([3.0, 1.0, 2.0])
    assert w2_empirical_1d(a, a[::-1]) == 0.0


def test_w2_point_masses():
    assert abs(w2_empirical_1d(np.zeros(8), np.full(5, -2.5)) - 2.5) < 1e-14


def test_w2_empty_raises():
    with pytest.raises(EmptySample):
        w2_empirical_1d(np.array([]), np.array([1.0]))


def test_w2_symmetry_mixed_sizes():
    rng = np.random.default_rng(2)
    a = rng.normal(size=40)
    b = rng.normal(1.0, size=25)
    assert abs(w2_empirical_1d(a, b) - w2_empirical_1d(b, a)) < 1e-14
    assert w2_empirical_1d(a, b) > 0.5


def test_w2_same_law_below_permutation_threshold():
    # two seeded samples from one law vs the permutation-null 95% quantile
    rng = np.random.default_rng(3)
    pool = rng.exponential(1.0, 400)
    a, b = pool[:200], pool[200:]
    observed = w2_empirical_1d(a, b)
    null = []
    for _ in range(400):
        perm = rng.permutation(pool)
        null.append(w2_empirical_1d(perm[:200], perm[200:]))
    assert observed <= np.quantile(null, 0.95)


# --- coupling bound plumbing ---

def test_coupling_w2_bound_zero_at_horizon():
    ts = np.array([0.0, 1.0, 2.0])
    est = McEstimate(ts, np.array([1.0, 0.5, 0.0]), np.zeros(3), 100)
    assert coupling_w2_bound(est, 2.0, bias_bound=10.0) == 0.0
    assert coupling_w2_bound(est, 0.0, bias_bound=0.01) == 1.0


def test_coupling_w2_bound_horizon_too_short():
    ts = np.array([0.0, 1.0, 2.0])
    est = McEstimate(ts, np.array([1.0, 0.01, 0.0]), np.zeros(3), 100)
    with pytest.raises(HorizonTooShort):
        coupling_w2_bound(est, 1.0, bias_bound=0.5)


def test_closed_form_bound_value():
    k = build_kernel(TorusSpec(1, 3))
    # x0 = (1,1,1): E (sum X)^2 = 9; bound(0) = sqrt(2 * 1 * 3 * 9)
    b = closed_form_w2_bound(k, 9.0, 0.75, 0.0)
    assert abs(b - math.sqrt(54.0)) < 1e-12


# --- corollary ---

def test_corollary_constant_profile_trivial():
    k = build_kernel(TorusSpec(1, 3))
    ts = np.linspace(0, 14, 141)
    est = McEstimate(ts, np.zeros(141), np.zeros(141), 100)
    out = local_corollary_check(est, 0.0, k, 0.75)
    assert out["integral"] == 0.0


def test_corollary_tail_too_fat():
    k = build_kernel(TorusSpec(1, 3))
    ts = np.linspace(0, 1, 11)  # far too short a horizon
    est = McEstimate(ts, np.ones(11), np.zeros(11), 100)
    with pytest.raises(TailTooFat):
        local_corollary_check(est, 2 / 9, k, 0.75)


# --- misc ---

def test_grid_function_validation():
    with pytest.raises(ValueError):
        GridFunction(0.0, -0.1, np.ones(3))
    with pytest.raises(ValueError):
        GridFunction(0.0, 0.1, np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        GridFunction(0.0, 0.1, np.ones(3), tail_model=(-1.0, 1.0))


def test_envelope_params_validation():
    with pytest.raises(ValueError):
        EnvelopeParams(rate=-0.1)
    with pytest.raises(ValueError):
        EnvelopeParams(amplitude=0.0)


def test_mcestimate_from_sums():
    vals = np.array([[1.0], [2.0], [3.0], [4.0]])
    est = McEstimate.from_sums(
        np.array([0.0]), vals.sum(axis=0), (vals**2).sum(axis=0), 4
    )
    assert abs(est.mean[0] - 2.5) < 1e-15
    ref = np.std(vals, ddof=1) / 2.0
    assert abs(est.stderr[0] - ref) < 1e-15


def test_normal_quantile_symmetry():
    assert abs(normal_quantile(0.5)) < 1e-9
    assert abs(normal_quantile(0.975) - 1.959963985) < 1e-6
    assert abs(normal_quantile(0.025) + normal_quantile(0.975)) < 1e-9
    assert bonferroni_threshold(1) == pytest.approx(3.0, abs=1e-6)


def test_renewal_unstable_step_guard():
    # h * G(0) / 2 too close to 1 makes forward substitution meaningless
    g = GridFunction(0.0, 0.05, np.full(20, 30.0), tail_model=None)
    from potlatch.errors import UnstableStep

    with pytest.raises(UnstableStep):
        renewal_H(g)
