"""Closed-form G, the renewal solution H, convergence envelopes, and estimators.

G(t) is the squared l2 norm of the Laplacian of the torus heat kernel;
its renewal equation H = G + G*H is solved by forward substitution on a
uniform grid. Monte-Carlo aggregates carry means and standard errors;
rate fits confront them with the polynomial-times-exponential envelopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backend import core
from .errors import (
    EmptySample,
    GridTooCoarse,
    HorizonTooShort,
    NonPositiveMean,
    TailTooFat,
    UnstableStep,
)
from .kernel import Kernel
from .spectral import _check_torus, _ell


@dataclass
class GridFunction:
    """Uniformly gridded function of time with an optional exponential tail.

    tail_model = (rate, coeff) stands for coeff * exp(-rate * t) beyond
    the last grid point; integration uses it analytically.
    """

    t0: float
    h: float
    values: np.ndarray
    tail_model: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid step must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if self.tail_model is not None and self.tail_model[0] <= 0:
            raise ValueError("tail rate must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.values.shape[0])

    def trapezoid(self) -> float:
        v = self.values
        return self.h * (v.sum() - 0.5 * (v[0] + v[-1]))


@dataclass
class McEstimate:
    """Monte-Carlo mean and standard error per sample time.

    stderr is zero in the degenerate single-replica case (only used by
    exactness checks at horizon 0).
    """

    sample_times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    replica_count: int

    @classmethod
    def from_sums(cls, sample_times, sums, sumsq, replicas: int) -> "McEstimate":
        ts = np.asarray(sample_times, dtype=float)
        sums = np.asarray(sums, dtype=float)
        sumsq = np.asarray(sumsq, dtype=float)
        mean = sums / replicas
        if replicas >= 2:
            var = np.maximum(sumsq - sums * sums / replicas, 0.0) / (replicas - 1)
            stderr = np.sqrt(var / replicas)
        else:
            stderr = np.zeros_like(mean)
        return cls(ts, mean, stderr, replicas)

    def window(self, t_a: float, t_b: float) -> "McEstimate":
        sel = (self.sample_times >= t_a) & (self.sample_times <= t_b)
        return McEstimate(
            self.sample_times[sel], self.mean[sel], self.stderr[sel],
            self.replica_count,
        )


@dataclass
class EnvelopeParams:
    """Free parameters of a polynomial-times-exponential envelope.

    The paper-style constants are existential; here they are fit
    parameters. value(t) = amplitude * n^-d / (t^poly_exponent ^ n^crossover
    saturation) * exp(-rate * t).
    """

    rate: Optional[float] = None
    poly_exponent: Optional[float] = None
    crossover: Optional[float] = None
    amplitude: float = 1.0

    def __post_init__(self):
        if self.rate is not None and self.rate < 0:
            raise ValueError("rate must be >= 0")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")


def stability_step(d: int, n: int) -> float:
    """Largest admissible grid step for G on T_n^d: min(0.05, 1/(4 max lam))."""
    lam_max = float(_ell(n).max())  # max over the lattice equals the 1-d max
    return min(0.05, 1.0 / (4.0 * lam_max))


def compute_G(d: int, n: int, horizon: float, h: float) -> GridFunction:
    """G(t) = n^-d sum_x lam_x^2 exp(-2 lam_x t) via per-coordinate sums.

    Factorized over coordinates: with ell_k = 1 - cos(2 pi k / n) and
    A_m(t) = sum_k ell_k^m exp(-2 t ell_k / d),

        G(t) = n^-d d^-2 [ d A2 A0^(d-1) + d(d-1) A1^2 A0^(d-2) ],

    O(n) per grid point instead of O(n^d). Attaches the slow-mode tail
    with rate 2 gamma11 / d.
    """
    _check_torus(d, n)
    hmax = stability_step(d, n)
    if h > hmax + 1e-15:
        raise GridTooCoarse(f"h = {h} exceeds stability bound {hmax:.6g}")
    ell = _ell(n)
    m = int(round(horizon / h)) + 1
    values = np.empty(m)
    chunk = max(1, 2_000_000 // n)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        t = (np.arange(lo, hi) * h)[:, None]
        w = np.exp(-2.0 * t * ell[None, :] / d)
        A0 = w.sum(axis=1)
        A1 = w @ ell
        A2 = w @ (ell * ell)
        if d == 1:
            g = A2
        else:
            g = d * A2 * A0 ** (d - 1) + d * (d - 1) * A1**2 * A0 ** (d - 2)
        values[lo:hi] = g / (float(n) ** d * d * d)
    rate = 2.0 * float(ell[1]) / d
    coeff = float(values[-1]) * math.exp(rate * (m - 1) * h)
    return GridFunction(t0=0.0, h=h, values=values, tail_model=(rate, coeff))


def integral_check_G(g: GridFunction) -> float:
    """Trapezoid quadrature of G plus its analytic exponential tail."""
    if g.tail_model is None:
        raise ValueError("integral check needs a tail model")
    rate, _coeff = g.tail_model
    return g.trapezoid() + float(g.values[-1]) / rate


def renewal_H(g: GridFunction) -> GridFunction:
    """Solve H = G + G*H by forward-substitution product trapezoid.

    The residual of the discrete equation is re-evaluated with the same
    quadrature; failure indicates an unstable step (refine h).
    """
    gv = np.ascontiguousarray(g.values, dtype=float)
    if 1.0 - 0.5 * g.h * float(gv[0]) <= 0.5:
        raise UnstableStep(
            f"h * G(0) / 2 = {0.5 * g.h * gv[0]:.3g} too large; refine h"
        )
    H = core.volterra_solve(gv, g.h)
    conv = core.conv_trapz(gv, np.ascontiguousarray(H), g.h)
    resid = float(np.abs(H - gv - conv).max())
    if resid > 1e-8 * float(np.abs(H).max()):
        raise UnstableStep(f"Volterra residual {resid:.3e}; refine h")
    return GridFunction(t0=g.t0, h=g.h, values=H, tail_model=None)


def convolve_grid(f: GridFunction, g: GridFunction) -> GridFunction:
    if abs(f.h - g.h) > 1e-15 or f.t0 != g.t0:
        raise ValueError("grids must match")
    vals = core.conv_trapz(
        np.ascontiguousarray(f.values, dtype=float),
        np.ascontiguousarray(g.values, dtype=float), f.h,
    )
    return GridFunction(t0=f.t0, h=f.h, values=vals, tail_model=None)


def envelope_global(gamma2: float, v0: float, horizon: float, h: float) -> GridFunction:
    """Upper envelope v0 * exp(-gamma2 * t) for the expected variance."""
    m = int(round(horizon / h)) + 1
    t = np.arange(m) * h
    return GridFunction(
        t0=0.0, h=h, values=v0 * np.exp(-gamma2 * t),
        tail_model=(gamma2, v0) if gamma2 > 0 else None,
    )


_ENVELOPE_SHAPES = {
    # which -> (poly exponent p, crossover exponent c) in t^p ^ n^c
    "energy": lambda d: (d / 2.0 + 1.0, d + 2.0),
    "variance": lambda d: (d / 2.0, float(d)),
    "avg": lambda d: (d / 2.0 + 1.0, d + 2.0),
}


def envelope_torus(
    d: int,
    n: int,
    which: str,
    params: Optional[EnvelopeParams] = None,
    *,
    t0: float = 1.0,
    horizon: float = 100.0,
    h: float = 1.0,
) -> GridFunction:
    """Torus envelope amplitude * n^-d / (t^p ^ n^c) * exp(-rate t).

    `which` picks the exponent pair: energy (d/2+1, d+2), variance
    (d/2, d), avg matches energy. Defaults: rate = 2 gamma11 / d,
    amplitude 1; override via params.
    """
    _check_torus(d, n)
    if which not in _ENVELOPE_SHAPES:
        raise ValueError(f"which must be one of {sorted(_ENVELOPE_SHAPES)}")
    params = params or EnvelopeParams()
    p, c = _ENVELOPE_SHAPES[which](d)
    if params.poly_exponent is not None:
        p = params.poly_exponent
    if params.crossover is not None:
        c = params.crossover
    rate = params.rate
    if rate is None:
        rate = 2.0 * (1.0 - math.cos(2.0 * math.pi / n)) / d
    if t0 <= 0:
        raise ValueError("t0 must be positive (the envelope diverges at 0)")
    m = int(round((horizon - t0) / h)) + 1
    t = t0 + np.arange(m) * h
    sat = np.minimum(t**p, float(n) ** c)
    vals = params.amplitude * float(n) ** (-d) / sat * np.exp(-rate * t)
    return GridFunction(t0=t0, h=h, values=vals, tail_model=None)


def envelope_value(d, n, which, params, t):
    """Pointwise evaluation of the torus envelope at times t."""
    p, c = _ENVELOPE_SHAPES[which](d)
    if params.poly_exponent is not None:
        p = params.poly_exponent
    if params.crossover is not None:
        c = params.crossover
    rate = params.rate
    if rate is None:
        rate = 2.0 * (1.0 - math.cos(2.0 * math.pi / n)) / d
    t = np.asarray(t, dtype=float)
    return params.amplitude * float(n) ** (-d) / np.minimum(t**p, float(n) ** c) \
        * np.exp(-rate * t)


def fit_envelope_amplitude(est: McEstimate, d: int, n: int, which: str,
                           rate: Optional[float] = None) -> EnvelopeParams:
    """Fit the free amplitude on log scale, keeping shape and rate fixed."""
    params = EnvelopeParams(rate=rate)
    ts = est.sample_times
    with np.errstate(divide="ignore"):
        shape = envelope_value(d, n, which, params, ts)
    sel = (est.mean > 0) & (ts > 0) & np.isfinite(shape) & (shape > 0)
    if not np.any(sel):
        raise NonPositiveMean("no positive means to fit the amplitude on")
    amp = float(np.exp(np.mean(np.log(est.mean[sel]) - np.log(shape[sel]))))
    return EnvelopeParams(
        rate=rate, poly_exponent=params.poly_exponent,
        crossover=params.crossover, amplitude=amp,
    )


def rate_fit(est: McEstimate, window: tuple[float, float]) -> dict:
    """Weighted LS of log(mean) on (1, t, log t) over the window.

    Returns exp_rate (decay rate, sign-flipped t coefficient),
    poly_exponent (log t coefficient), their standard errors, and the
    weighted r_squared.
    """
    sub = est.window(window[0], window[1])
    if sub.sample_times.shape[0] < 5:
        raise ValueError("need at least 5 sample times in the fit window")
    if np.any(sub.mean <= 0):
        raise NonPositiveMean("rate fit needs strictly positive means")
    t = sub.sample_times
    ylog = np.log(sub.mean)
    sigma = sub.stderr / sub.mean
    floor = max(1e-12, float(sigma[sigma > 0].min()) * 1e-3) if np.any(sigma > 0) else 1.0
    sigma = np.maximum(sigma, floor)
    w = 1.0 / sigma**2
    X = np.column_stack([np.ones_like(t), t, np.log(t)])
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], ylog * sw, rcond=None)
    fitted = X @ beta
    resid = ylog - fitted
    wmean = np.sum(w * ylog) / np.sum(w)
    ss_res = float(np.sum(w * resid**2))
    ss_tot = float(np.sum(w * (ylog - wmean) ** 2))
    cov = np.linalg.inv((X * w[:, None]).T @ X)
    return {
        "exp_rate": float(-beta[1]),
        "poly_exponent": float(beta[2]),
        "r_squared": 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0,
        "se_exp_rate": float(math.sqrt(max(cov[1, 1], 0.0))),
        "se_poly_exponent": float(math.sqrt(max(cov[2, 2], 0.0))),
    }


def w2_empirical_1d(a, b) -> float:
    """Empirical L2 distance between matched quantiles of two 1-d samples.

    Both samples are interpolated onto the plotting positions
    (j + 1/2) / m, m = max(len(a), len(b)); equal-size samples reduce to
    matched order statistics. Symmetric; zero iff the empirical laws agree.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be nonempty")
    m = max(a.size, b.size)
    p = (np.arange(m) + 0.5) / m

    def quantiles(x):
        xs = np.sort(x)
        px = (np.arange(x.size) + 0.5) / x.size
        return np.interp(p, px, xs)

    qa = quantiles(a)
    qb = quantiles(b)
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def closed_form_w2_bound(k: Kernel, x0_sq_mean: float, gamma2: float, t) -> np.ndarray:
    """sqrt(2 pi_max / pi_min * n * E[(sum X_j(0))^2]) * exp(-gamma2 t / 2)."""
    amp = math.sqrt(2.0 * k.pi_max / k.pi_min * k.n_sites * x0_sq_mean)
    return amp * np.exp(-gamma2 * np.asarray(t, dtype=float) / 2.0)


def coupling_w2_bound(gap_est: McEstimate, t: float, bias_bound: float) -> float:
    """Truncated-coupling Wasserstein statistic sqrt(E sum_i gap_i(t)^2).

    gap_est holds the per-time Monte-Carlo mean of
    sum_i (Xtilde_i(t) - Xtilde_i(T_inf))^2, with T_inf the last sample
    time. Exactly zero at t = T_inf; raises HorizonTooShort when the
    envelope-certified truncation bias exceeds 10% of the statistic.
    """
    idx = int(np.argmin(np.abs(gap_est.sample_times - t)))
    if abs(gap_est.sample_times[idx] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t = {t} is not a sample time")
    if idx == gap_est.sample_times.shape[0] - 1:
        return 0.0
    statistic = math.sqrt(max(gap_est.mean[idx], 0.0))
    if bias_bound > 0.1 * statistic:
        raise HorizonTooShort(
            f"truncation bias {bias_bound:.3e} exceeds 10% of {statistic:.3e}"
        )
    return statistic


def corollary_tail_bound(k: Kernel, gamma2: float, v0: float, horizon: float) -> float:
    """Envelope-certified bound on the integral of E(E2 + E*) beyond horizon.

    E2 <= V and E* <= 4 pi_max^2 / pi_min V, so the tail is at most
    (1 + 4 pi_max^2 / pi_min) V0 exp(-gamma2 T) / gamma2.
    """
    c = 1.0 + 4.0 * k.pi_max**2 / k.pi_min
    return c * v0 * math.exp(-gamma2 * horizon) / gamma2


def local_corollary_check(
    est: McEstimate, v0: float, k: Kernel, gamma2: float
) -> dict:
    """Quadrature of the E2 + E* means plus an exponential tail estimate.

    Returns {"integral", "stderr", "tail_bound"}; the integral should
    equal v0 within 3 stderr + tail_bound. The propagated stderr is the
    conservative sum_k w_k se_k (replicas are shared across times, so
    correlations can approach 1). Raises TailTooFat when the certified
    tail exceeds 1% of v0.
    """
    ts = est.sample_times
    horizon = float(ts[-1])
    tail_bound = corollary_tail_bound(k, gamma2, v0, horizon)
    if tail_bound > 0.01 * v0:
        raise TailTooFat(
            f"certified tail {tail_bound:.3e} exceeds 1% of v0 = {v0:.3e}"
        )
    w = np.empty_like(ts)
    w[1:-1] = (ts[2:] - ts[:-2]) / 2.0
    w[0] = (ts[1] - ts[0]) / 2.0
    w[-1] = (ts[-1] - ts[-2]) / 2.0
    integral = float(w @ est.mean) + float(est.mean[-1]) / gamma2
    stderr = float(w @ est.stderr)
    return {"integral": integral, "stderr": stderr, "tail_bound": tail_bound}


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF by bisection on erfc (no SciPy)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bonferroni_threshold(m: int, base_z: float = 3.0) -> float:
    """z threshold whose family error over m tests matches one base_z test."""
    alpha = 2.0 * (0.5 * math.erfc(base_z / math.sqrt(2.0)))
    return normal_quantile(1.0 - alpha / (2.0 * m))
