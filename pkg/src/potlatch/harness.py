"""Experiment configuration, replica orchestration, and verdict reporting.

An ExperimentConfig is a JSON-serializable description of one run:
graph, process, initial condition, horizon, sample schedule, replica
count, seed, and named checks. Replicas are dispatched in fixed-size
chunks (deterministic merge regardless of worker count); every named
check maps to exactly one verification.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import engine
from ._core_py import _mix64
from .analysis import McEstimate, bonferroni_threshold, normal_quantile
from .engine import ME, ME2, MES, MMM, MSD, MV, MYB, default_mask
from .errors import ConfigInvalid, NotATorus
from .kernel import (
    CompleteSpec,
    CustomSpec,
    GraphSpec,
    Kernel,
    TorusSpec,
    build_kernel,
    load_kernel_json,
)

_FUNC_COLUMNS = {
    "V": engine.FV,
    "E": engine.FE,
    "E2": engine.FE2,
    "Estar": engine.FES,
    "sum_delta_sq": engine.FSD,
    "Ybar": engine.FYB,
    "min_mass": engine.FMIN,
    "max_mass": engine.FMAX,
}

_MASK_OF = {
    "V": MV, "E": ME, "E2": ME2, "Estar": MES,
    "sum_delta_sq": MSD, "Ybar": MYB, "min_mass": MMM, "max_mass": MMM,
}

CSV_HEADER = "replica_id,t,V,E,E2,Estar,sum_delta_sq,Ybar,min_mass,max_mass"


@dataclass(frozen=True)
class InitSpec:
    """Initial condition: delta(site), constant(c), iid(...), or custom vector."""

    kind: str
    site: int = 0
    value: float = 0.0
    mean: float = 0.0
    second_moment: float = 0.0
    distribution: str = ""
    values: Optional[tuple] = None


@dataclass(frozen=True)
class ExperimentConfig:
    graph: GraphSpec
    process: str                    # smoothing | potlatch | dual
    init: InitSpec
    horizon: float
    sample_times: Optional[tuple] = None  # explicit; None -> geometric default
    replicas: int = 1
    seed: int = 0
    checks: tuple = ()


def geometric_sample_times(t0: float, horizon: float, per_decade: int = 20) -> np.ndarray:
    """Log-spaced schedule from t0 to horizon, about per_decade points per decade."""
    if horizon <= t0:
        return np.array([horizon], dtype=float)
    decades = math.log10(horizon / t0)
    m = max(2, int(math.ceil(per_decade * decades)) + 1)
    return np.geomspace(t0, horizon, m)


# ---------------------------------------------------------------------------
# config (de)serialization and validation


def _parse_graph(doc, diags) -> Optional[GraphSpec]:
    if not isinstance(doc, dict) or "kind" not in doc:
        diags.append(("graph", "must be an object with a 'kind'"))
        return None
    kind = doc["kind"]
    try:
        if kind == "torus":
            return TorusSpec(d=int(doc["d"]), n=int(doc["n"]))
        if kind == "complete":
            return CompleteSpec(n=int(doc["n"]))
        if kind == "custom":
            if "path" in doc:
                k = load_kernel_json(doc["path"])
                return k.graph
            P = np.asarray(doc["P"], dtype=float)
            pi = np.asarray(doc["pi"], dtype=float) if doc.get("pi") is not None else None
            return CustomSpec(P=P, pi=pi)
    except (KeyError, TypeError, ValueError) as exc:
        diags.append(("graph", str(exc)))
        return None
    diags.append(("graph.kind", f"unknown kind {kind!r}"))
    return None


def _parse_init(doc, diags) -> Optional[InitSpec]:
    if not isinstance(doc, dict) or "kind" not in doc:
        diags.append(("init", "must be an object with a 'kind'"))
        return None
    kind = doc["kind"]
    try:
        if kind == "delta":
            return InitSpec(kind="delta", site=int(doc.get("site", 0)))
        if kind == "constant":
            return InitSpec(kind="constant", value=float(doc["value"]))
        if kind == "iid":
            return InitSpec(
                kind="iid",
                mean=float(doc["mean"]),
                second_moment=float(doc["second_moment"]),
                distribution=str(doc["distribution"]),
            )
        if kind == "custom":
            return InitSpec(kind="custom", values=tuple(float(v) for v in doc["values"]))
    except (KeyError, TypeError, ValueError) as exc:
        diags.append(("init", str(exc)))
        return None
    diags.append(("init.kind", f"unknown kind {kind!r}"))
    return None


def config_from_json(doc) -> ExperimentConfig:
    """Parse and validate; raises ConfigInvalid with field diagnostics."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    diags: list[tuple[str, str]] = []
    graph = _parse_graph(doc.get("graph"), diags)
    init = _parse_init(doc.get("init"), diags)
    process = doc.get("process")
    if process not in ("smoothing", "potlatch", "dual"):
        diags.append(("process", f"must be smoothing|potlatch|dual, got {process!r}"))
    horizon = doc.get("horizon")
    if not isinstance(horizon, (int, float)) or horizon <= 0:
        diags.append(("horizon", "must be a positive number"))
    replicas = doc.get("replicas", 1)
    if not isinstance(replicas, int) or replicas < 1:
        diags.append(("replicas", "must be an integer >= 1"))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        diags.append(("seed", "must be an integer"))
    sample_times = doc.get("sample_times")
    ts: Optional[tuple] = None
    if sample_times is not None:
        if isinstance(sample_times, dict):
            try:
                ts = tuple(
                    geometric_sample_times(
                        float(sample_times.get("t0", 0.1)),
                        float(horizon),
                        int(sample_times.get("per_decade", 20)),
                    )
                )
            except (TypeError, ValueError) as exc:
                diags.append(("sample_times", str(exc)))
        else:
            ts = tuple(float(t) for t in sample_times)
            arr = np.asarray(ts)
            if np.any(np.diff(arr) < 0) or (isinstance(horizon, (int, float))
                                            and (arr[0] < 0 or arr[-1] > horizon)):
                diags.append(("sample_times", "must be increasing within [0, horizon]"))
    checks = tuple(doc.get("checks", ()))
    for name in checks:
        if name not in CHECKS:
            diags.append(("checks", f"unknown check {name!r}"))
    if len(set(checks)) != len(checks):
        diags.append(("checks", "each check may appear at most once"))
    if init is not None and init.kind == "iid":
        if init.second_moment < init.mean**2:
            diags.append(("init.second_moment", "requires second_moment >= mean^2"))
        if init.distribution not in ("exponential", "bernoulli-scaled", "lognormal"):
            diags.append(("init.distribution", f"unknown {init.distribution!r}"))
        elif init.distribution == "exponential" and init.mean > 0:
            if abs(init.second_moment - 2.0 * init.mean**2) > 1e-9 * init.mean**2:
                diags.append(
                    ("init.second_moment", "exponential requires zeta = 2 mu^2")
                )
        if init.mean <= 0:
            diags.append(("init.mean", "iid init requires mean > 0"))
    if process == "potlatch" and init is not None:
        if init.kind == "constant" and init.value < 0:
            diags.append(("init.value", "potlatch init must be nonnegative"))
        if init.kind == "custom" and init.values and min(init.values) < -1e-12:
            diags.append(("init.values", "potlatch init must be nonnegative"))
    if diags:
        raise ConfigInvalid(diags)
    return ExperimentConfig(
        graph=graph, process=process, init=init, horizon=float(horizon),
        sample_times=ts, replicas=replicas, seed=seed, checks=checks,
    )


def config_to_json(cfg: ExperimentConfig) -> dict:
    if isinstance(cfg.graph, TorusSpec):
        graph = {"kind": "torus", "d": cfg.graph.d, "n": cfg.graph.n}
    elif isinstance(cfg.graph, CompleteSpec):
        graph = {"kind": "complete", "n": cfg.graph.n}
    else:
        graph = {
            "kind": "custom",
            "P": np.asarray(cfg.graph.P).tolist(),
            "pi": None if cfg.graph.pi is None else np.asarray(cfg.graph.pi).tolist(),
        }
    init: dict = {"kind": cfg.init.kind}
    if cfg.init.kind == "delta":
        init["site"] = cfg.init.site
    elif cfg.init.kind == "constant":
        init["value"] = cfg.init.value
    elif cfg.init.kind == "iid":
        init.update(
            mean=cfg.init.mean,
            second_moment=cfg.init.second_moment,
            distribution=cfg.init.distribution,
        )
    elif cfg.init.kind == "custom":
        init["values"] = list(cfg.init.values)
    return {
        "graph": graph,
        "process": cfg.process,
        "init": init,
        "horizon": cfg.horizon,
        "sample_times": None if cfg.sample_times is None else list(cfg.sample_times),
        "replicas": cfg.replicas,
        "seed": cfg.seed,
        "checks": list(cfg.checks),
    }


# ---------------------------------------------------------------------------
# initial conditions


def resolve_init(cfg: ExperimentConfig, kernel: Kernel):
    """Engine init argument for this config."""
    n = kernel.n_sites
    ini = cfg.init
    if ini.kind == "delta":
        y0 = np.zeros(n)
        y0[ini.site] = 1.0
        return y0
    if ini.kind == "constant":
        return np.full(n, ini.value)
    if ini.kind == "custom":
        return np.asarray(ini.values, dtype=float)
    if ini.kind == "iid":
        mu, zeta = ini.mean, ini.second_moment
        if ini.distribution == "exponential":
            return ("exponential", mu)
        if ini.distribution == "bernoulli-scaled":
            # a * Bernoulli(p): a p = mu, a^2 p = zeta
            return ("bernoulli", zeta / mu, mu * mu / zeta)
        if ini.distribution == "lognormal":
            s2 = math.log(zeta / (mu * mu))
            return ("lognormal", math.log(mu) - 0.5 * s2, math.sqrt(max(s2, 0.0)))
    raise ConfigInvalid([("init.kind", f"unresolvable {ini.kind!r}")])


def init_moments(cfg: ExperimentConfig, kernel: Kernel) -> tuple[float, float]:
    """(E X_j, E X_j^2) per site for the configured init (iid or deterministic)."""
    ini = cfg.init
    if ini.kind == "iid":
        return ini.mean, ini.second_moment
    y0 = np.asarray(resolve_init(cfg, kernel), dtype=float)
    return float(y0.mean()), float((y0**2).mean())


def initial_variance(cfg: ExperimentConfig, kernel: Kernel) -> float:
    """E V(0) for the configured init.

    Deterministic inits evaluate V directly; iid inits use
    E V(0) = (zeta - mu^2)(1 - sum pi_i^2) from zero covariances.
    """
    ini = cfg.init
    if ini.kind == "iid":
        return (ini.second_moment - ini.mean**2) * (1.0 - float(np.sum(kernel.pi**2)))
    y0 = np.asarray(resolve_init(cfg, kernel), dtype=float)
    return engine.eval_functionals(y0, kernel, include=("V",))["V"]


def total_mass_sq_mean(cfg: ExperimentConfig, kernel: Kernel) -> float:
    """E[(sum_j X_j(0))^2] under the configured init (zero covariances)."""
    n = kernel.n_sites
    ini = cfg.init
    if ini.kind == "iid":
        mu, zeta = ini.mean, ini.second_moment
        return n * zeta + n * (n - 1) * mu * mu
    y0 = np.asarray(resolve_init(cfg, kernel), dtype=float)
    return float(y0.sum()) ** 2


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class VerdictEntry:
    name: str
    passed: bool
    observed: float
    bound_or_target: float
    tolerance: float
    runtime_seconds: float
    detail: dict = field(default_factory=dict)


@dataclass
class VerdictReport:
    entries: list

    @property
    def all_pass(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_json(self) -> dict:
        return {"checks": [asdict(e) for e in self.entries]}

    @classmethod
    def from_json(cls, doc) -> "VerdictReport":
        if isinstance(doc, str):
            doc = json.loads(doc)
        entries = [
            VerdictEntry(
                name=e["name"], passed=e["passed"], observed=e["observed"],
                bound_or_target=e["bound_or_target"], tolerance=e["tolerance"],
                runtime_seconds=e["runtime_seconds"], detail=e.get("detail", {}),
            )
            for e in doc["checks"]
        ]
        return cls(entries)

    def verdict_lines(self) -> list[str]:
        """One JSON verdict document per check (the CLI output contract)."""
        lines = []
        for e in self.entries:
            lines.append(json.dumps({
                "check": e.name,
                "pass": e.passed,
                "observed": e.observed,
                "bound": e.bound_or_target,
                "tolerance": e.tolerance,
            }))
        return lines


# ---------------------------------------------------------------------------
# experiment runner


def derive_seed(seed: int, tag: int) -> int:
    """Decorrelated sub-seed for auxiliary runs."""
    return _mix64((seed & ((1 << 64) - 1)) ^ (0xABCD_EF01_2345_6789 + tag))


def _estimates_from_sums(res: dict, mask: int, is_torus: bool) -> dict:
    out = {}
    R = res["replicas"]
    ts = res["sample_times"]
    for name, col in _FUNC_COLUMNS.items():
        if not (mask & _MASK_OF[name]):
            continue
        if name in ("E", "sum_delta_sq") and not is_torus:
            continue
        out[name] = McEstimate.from_sums(
            ts, res["sums"][:, col], res["sumsq"][:, col], R
        )
    return out


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                   func_mask: Optional[int] = None):
    """Run the configured experiment; returns (estimate bundle, VerdictReport).

    Deterministic given (cfg, seed): replica chunking is fixed and the
    merge is ordered, so worker count never changes any number.
    """
    kernel = build_kernel(cfg.graph)
    ts = np.asarray(
        cfg.sample_times
        if cfg.sample_times is not None
        else geometric_sample_times(min(0.1, cfg.horizon), cfg.horizon),
        dtype=float,
    )
    bundle: dict = {}
    raw: dict = {}
    if cfg.process in ("smoothing", "potlatch"):
        mask = default_mask(kernel) if func_mask is None else func_mask
        res = engine.run_replicas(
            cfg.process, kernel, resolve_init(cfg, kernel), cfg.horizon, ts,
            cfg.replicas, cfg.seed,
            func_mask=mask,
            check_mass="mass_conservation" in cfg.checks,
            workers=workers,
        )
        bundle = _estimates_from_sums(res, mask, kernel.is_torus)
        raw = res
    elif cfg.process == "dual":
        res = engine.run_dual_replicas(
            kernel, np.asarray(resolve_init(cfg, kernel), dtype=float), ts,
            cfg.replicas, cfg.seed,
            collect_xt_moments=True, collect_x_moments=True,
            workers=workers,
        )
        R = res["replicas"]
        for i in range(kernel.n_sites):
            bundle[f"Xtilde_{i}"] = McEstimate.from_sums(
                ts, res["xt_m1"][:, i], res["xt_m2"][:, i], R
            )
            bundle[f"X_{i}"] = McEstimate.from_sums(
                ts, res["x_m1"][:, i], res["x_m2"][:, i], R
            )
        raw = res
    else:
        raise ConfigInvalid([("process", f"unknown process {cfg.process!r}")])

    entries = []
    for name in cfg.checks:
        start = time.perf_counter()
        entry = CHECKS[name](cfg, kernel, ts, bundle, raw, workers)
        entry.runtime_seconds = time.perf_counter() - start
        entries.append(entry)
    return bundle, VerdictReport(entries)


# ---------------------------------------------------------------------------
# named checks (each maps to exactly one verification)


def _check_mass_conservation(cfg, kernel, ts, bundle, raw, workers) -> VerdictEntry:
    if cfg.process != "potlatch":
        return VerdictEntry("mass_conservation", False, math.nan, 0.0, 0.0, 0.0,
                            {"error": "requires a potlatch run"})
    y0 = resolve_init(cfg, kernel)
    if isinstance(y0, np.ndarray):
        total = abs(float(y0.sum()))
    else:
        total = kernel.n_sites * cfg.init.mean
    tol = 1e-12 * max(total, 1.0)
    drift = raw.get("max_mass_drift", math.nan)
    return VerdictEntry("mass_conservation", drift <= tol, drift, 0.0, tol, 0.0)


def _series_subsample(cfg, kernel, ts, workers, count=32):
    """Small per-path series run with a derived seed for pathwise checks."""
    reps = min(cfg.replicas, count)
    seed = derive_seed(cfg.seed, 1)
    rows = []
    for r in range(reps):
        series, _ = engine.simulate(
            cfg.process, kernel, resolve_init(cfg, kernel), cfg.horizon, ts,
            engine.ClockStream(seed=seed, replica_id=r),
        )
        rows.append(series)
    return rows


def _check_energy_monotone(cfg, kernel, ts, bundle, raw, workers) -> VerdictEntry:
    if cfg.process != "smoothing" or not kernel.is_torus:
        return VerdictEntry("energy_monotone", False, math.nan, 0.0, 0.0, 0.0,
                            {"error": "requires smoothing on a torus"})
    worst = -math.inf
    for series in _series_subsample(cfg, kernel, ts, workers):
        worst = max(worst, float(np.diff(series.E).max(initial=-math.inf)))
    return VerdictEntry("energy_monotone", worst <= 1e-12, worst, 0.0, 1e-12, 0.0)


def _check_minmax_monotone(cfg, kernel, ts, bundle, raw, workers) -> VerdictEntry:
    if cfg.process != "smoothing":
        return VerdictEntry("minmax_monotone", False, math.nan, 0.0, 0.0, 0.0,
                            {"error": "requires a smoothing run"})
    worst = -math.inf
    for series in _series_subsample(cfg, kernel, ts, workers):
        worst = max(worst, float(np.diff(series.max_mass).max(initial=-math.inf)))
        worst = max(worst, float((-np.diff(series.min_mass)).max(initial=-math.inf)))
    return VerdictEntry("minmax_monotone", worst <= 1e-12, worst, 0.0, 1e-12, 0.0)


def _check_global_envelope(cfg, kernel, ts, bundle, raw, workers) -> VerdictEntry:
    if cfg.process != "smoothing" or "V" not in bundle:
        return VerdictEntry("global_envelope", False, math.nan, 0.0, 0.0, 0.0,
                            {"error": "requires a smoothing run recording V"})
    from .spectral import decompose

    gamma2 = decompose(kernel).gap_two_step
    v0 = initial_variance(cfg, kernel)
    est = bundle["V"]
    envelope = v0 * np.exp(-gamma2 * est.sample_times)
    margin = est.mean - (envelope + 3.0 * est.stderr)
    worst = float(margin.max())
    return VerdictEntry(
        "global_envelope", worst <= 1e-12, worst, 0.0, 1e-12, 0.0,
        {"gamma2": gamma2, "v0": v0},
    )


def _check_martingale_constant(cfg, kernel, ts, bundle, raw, workers) -> VerdictEntry:
    """Total smoothing mass sum_i Y_i(t) = n^d Ybar(t) has constant mean."""
    if cfg.process != "smoothing" or "Ybar" not in bundle:
        return VerdictEntry("martingale_constant", False, math.nan, 0.0, 0.0, 0.0,
                            {"error": "requires a smoothing run recording Ybar"})
    est = bundle["Ybar"]
    target = est.mean[0]
    z = bonferroni_threshold(max(len(est.mean) - 1, 1))
    se = np.maximum(est.stderr, 1e-300)
    worst = float((np.abs(est.mean - target) / se)[1:].max(initial=0.0))
    return VerdictEntry("martingale_constant", worst <= z, worst, z, z, 0.0)


def _check_duality_mean(cfg, kernel, ts, bundle, raw, workers) -> VerdictEntry:
    """E X_i(t) (direct potlatch) vs E Xtilde_i(t) (dual family), 3 sigma."""
    if cfg.process != "dual":
        return VerdictEntry("duality_mean", False, math.nan, 0.0, 0.0, 0.0,
                            {"error": "requires a dual run"})
    x0 = np.asarray(resolve_init(cfg, kernel), dtype=float)
    direct = engine.run_replicas(
        "potlatch", kernel, x0, cfg.horizon, ts, cfg.replicas,
        derive_seed(cfg.seed, 2), func_mask=MYB, persite_moments=True,
        workers=workers,
    )
    R = cfg.replicas
    z = bonferroni_threshold(kernel.n_sites * len(ts))
    worst = 0.0
    for i in range(kernel.n_sites):
        a = McEstimate.from_sums(ts, direct["persite_m1"][:, i],
                                 direct["persite_m2"][:, i], R)
        b = bundle[f"Xtilde_{i}"]
        se = np.sqrt(a.stderr**2 + b.stderr**2)
        se = np.maximum(se, 1e-300)
        worst = max(worst, float((np.abs(a.mean - b.mean) / se).max()))
    return VerdictEntry("duality_mean", worst <= z, worst, z, z, 0.0)


CHECKS: dict[str, Callable] = {
    "mass_conservation": _check_mass_conservation,
    "energy_monotone": _check_energy_monotone,
    "minmax_monotone": _check_minmax_monotone,
    "global_envelope": _check_global_envelope,
    "martingale_constant": _check_martingale_constant,
    "duality_mean": _check_duality_mean,
}


# ---------------------------------------------------------------------------
# higher-level experiments


def avg_mass_experiment(cfg: ExperimentConfig, workers: Optional[int] = None):
    """Estimate E (Ybar(t) - Ybar(T_inf))^2 with T_inf = cfg.horizon.

    Returns (McEstimate, fitted EnvelopeParams). The envelope has the
    energy-type exponents (d/2 + 1, d + 2) with amplitude fit on log
    scale; smoothing only, any real-valued init.
    """
    from .analysis import fit_envelope_amplitude

    if cfg.process != "smoothing":
        raise ConfigInvalid([("process", "avg_mass_experiment needs smoothing")])
    kernel = build_kernel(cfg.graph)
    if not kernel.is_torus:
        raise NotATorus("average-mass envelope is defined on the torus")
    d, n = kernel.torus_shape()
    ts = np.asarray(
        cfg.sample_times
        if cfg.sample_times is not None
        else geometric_sample_times(min(0.1, cfg.horizon), cfg.horizon),
        dtype=float,
    )
    if ts[-1] < cfg.horizon:
        ts = np.append(ts, cfg.horizon)
    res = engine.run_replicas(
        cfg.process, kernel, resolve_init(cfg, kernel), cfg.horizon, ts,
        cfg.replicas, cfg.seed, func_mask=MYB, avgmass=True, workers=workers,
    )
    est = McEstimate.from_sums(ts, res["avg_sum"], res["avg_sumsq"], cfg.replicas)
    fit_window = est.window(ts[0], ts[-2] if len(ts) > 1 else ts[-1])
    try:
        params = fit_envelope_amplitude(fit_window, d, n, "avg")
    except Exception:
        params = None
    return est, params


def duality_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                       base_z: float = 3.0) -> VerdictEntry:
    """Compare mean and variance of X_i(t) vs Xtilde_i(t) per site and time.

    Direct potlatch replicas and dual-coupled replicas run with
    independently derived seeds; the pass threshold is the Bonferroni
    correction of base_z across sites x times x {mean, variance}.
    """
    if cfg.process != "dual":
        raise ConfigInvalid([("process", "duality_experiment needs process=dual")])
    kernel = build_kernel(cfg.graph)
    x0 = np.asarray(resolve_init(cfg, kernel), dtype=float)
    ts = np.asarray(
        cfg.sample_times
        if cfg.sample_times is not None
        else geometric_sample_times(min(0.1, cfg.horizon), cfg.horizon),
        dtype=float,
    )
    start = time.perf_counter()
    R = cfg.replicas
    direct = engine.run_replicas(
        "potlatch", kernel, x0, cfg.horizon, ts, R, derive_seed(cfg.seed, 2),
        func_mask=MYB, persite_moments=True, workers=workers,
    )
    dual = engine.run_dual_replicas(
        kernel, x0, ts, R, derive_seed(cfg.seed, 3),
        collect_xt_moments=True, workers=workers,
    )
    n = kernel.n_sites
    z = bonferroni_threshold(n * len(ts) * 2, base_z)
    worst = 0.0
    worst_what = ""
    for i in range(n):
        sa = _moment_stats(direct["persite_m1"][:, i], direct["persite_m2"][:, i],
                           direct["persite_m3"][:, i], direct["persite_m4"][:, i], R)
        sb = _moment_stats(dual["xt_m1"][:, i], dual["xt_m2"][:, i],
                           dual["xt_m3"][:, i], dual["xt_m4"][:, i], R)
        zm = np.abs(sa["mean"] - sb["mean"]) / np.maximum(
            np.sqrt(sa["se_mean"]**2 + sb["se_mean"]**2), 1e-300)
        zv = np.abs(sa["var"] - sb["var"]) / np.maximum(
            np.sqrt(sa["se_var"]**2 + sb["se_var"]**2), 1e-300)
        if float(zm.max()) > worst:
            worst, worst_what = float(zm.max()), f"mean site {i}"
        if float(zv.max()) > worst:
            worst, worst_what = float(zv.max()), f"var site {i}"
    return VerdictEntry(
        "duality", worst <= z, worst, z, z,
        time.perf_counter() - start, {"worst": worst_what, "replicas": R},
    )


def _moment_stats(s1, s2, s3, s4, R: int) -> dict:
    """Mean/variance and their standard errors from raw moment sums."""
    m1 = s1 / R
    m2 = s2 / R
    m3 = s3 / R
    m4 = s4 / R
    c2 = np.maximum(m2 - m1**2, 0.0)
    c4 = np.maximum(m4 - 4 * m1 * m3 + 6 * m1**2 * m2 - 3 * m1**4, 0.0)
    var = c2 * R / max(R - 1, 1)
    se_mean = np.sqrt(var / R)
    se_var = np.sqrt(np.maximum(c4 - c2**2 * (R - 3) / max(R - 1, 1), 0.0) / R)
    return {"mean": m1, "var": var, "se_mean": se_mean, "se_var": se_var}


# ---------------------------------------------------------------------------
# output writers


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_csv(fh, cfg: ExperimentConfig, workers=None, max_cells=5_000_000):
    """Per-replica trajectory CSV: one row per (replica, sample time)."""
    kernel = build_kernel(cfg.graph)
    ts = np.asarray(
        cfg.sample_times
        if cfg.sample_times is not None
        else geometric_sample_times(min(0.1, cfg.horizon), cfg.horizon),
        dtype=float,
    )
    if cfg.replicas * len(ts) * 10 > max_cells:
        raise ConfigInvalid(
            [("replicas", "trajectory CSV too large; reduce replicas or samples")]
        )
    fh.write(CSV_HEADER + "\n")
    for r in range(cfg.replicas):
        series, _ = engine.simulate(
            cfg.process if cfg.process != "dual" else "potlatch",
            kernel, resolve_init(cfg, kernel), cfg.horizon, ts,
            engine.ClockStream(seed=cfg.seed, replica_id=r),
        )
        cols = (series.V, series.E, series.E2, series.Estar,
                series.sum_delta_sq, series.Ybar, series.min_mass, series.max_mass)
        for k, t in enumerate(ts):
            vals = ",".join(_fmt(c[k]) for c in cols)
            fh.write(f"{r},{_fmt(t)},{vals}\n")
