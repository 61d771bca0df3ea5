"""Event-driven simulation of smoothing and potlatch trajectories.

Clock construction: one Poisson stream of rate n with uniform site marks
(equivalent in law to n independent unit-rate site clocks), driven by a
splittable 64-bit generator keyed by (seed, replica_id). Trajectories
are piecewise constant; functionals are recorded cadlag (state after all
events at times <= t).

Long-horizon smoothing runs can enable deviation mode: the simulated
field is the profile minus a running mean, recentered and rescaled by
exact powers of two at checkpoints. This tracks variance/energy decay
far below the resolution a raw float64 profile could represent, without
changing the law of any recorded functional.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .backend import core
from ._core_py import (
    ACT_RECORD,
    ACT_RESCALE,
    FE,
    FE2,
    FES,
    FMAX,
    FMIN,
    FSD,
    FV,
    FYB,
    INIT_BERNOULLI,
    INIT_EXPONENTIAL,
    INIT_FIXED,
    INIT_LOGNORMAL,
    KIND_POTLATCH,
    KIND_SMOOTHING,
    ME,
    ME2,
    MES,
    MMM,
    MSD,
    MV,
    MYB,
    NFUNC,
)
from .errors import (
    DimensionMismatch,
    HorizonExceeded,
    MemoryCapExceeded,
    NegativeMass,
    NotATorus,
)
from .kernel import Kernel, torus_neighbors

MASK_ALL = MV | ME | ME2 | MES | MSD | MYB | MMM
MASK_GENERAL = MV | ME2 | MES | MYB | MMM  # non-torus kernels

REPLICA_CHUNK = 4096  # fixed so the merge grouping never depends on workers

_FUNC_NAMES = ("V", "E", "E2", "Estar", "sum_delta_sq", "Ybar", "min_mass", "max_mass")
_FUNC_BITS = dict(zip(_FUNC_NAMES, (MV, ME, ME2, MES, MSD, MYB, MMM, MMM)))
_FUNC_COLS = dict(zip(_FUNC_NAMES, (FV, FE, FE2, FES, FSD, FYB, FMIN, FMAX)))


@dataclass(frozen=True)
class ClockStream:
    """Deterministic Poisson clock stream for one replica.

    When `events` is provided it overrides generation (testing hook);
    otherwise events come from the (seed, replica_id) keyed stream.
    """

    seed: int
    replica_id: int = 0
    events: Optional[tuple[np.ndarray, np.ndarray]] = None

    def materialize(self, n_sites: int, horizon: float, max_events: Optional[int] = None):
        if self.events is not None:
            return self.events
        cap = max_events if max_events is not None else _event_cap(n_sites, horizon)
        try:
            return core.clock_events(self.seed, self.replica_id, n_sites, horizon, cap)
        except OverflowError as exc:
            raise HorizonExceeded(str(exc)) from exc


@dataclass
class FunctionalSeries:
    """Per-trajectory functional records at the sample times."""

    sample_times: np.ndarray
    V: np.ndarray
    E: np.ndarray
    E2: np.ndarray
    Estar: np.ndarray
    sum_delta_sq: np.ndarray
    Ybar: np.ndarray
    min_mass: np.ndarray
    max_mass: np.ndarray
    kind: str = "smoothing"
    seed: int = 0
    replica_id: int = 0

    @classmethod
    def from_matrix(cls, sample_times, mat, kind, seed, replica_id):
        return cls(
            sample_times=np.asarray(sample_times, dtype=float),
            V=mat[:, FV].copy(),
            E=mat[:, FE].copy(),
            E2=mat[:, FE2].copy(),
            Estar=mat[:, FES].copy(),
            sum_delta_sq=mat[:, FSD].copy(),
            Ybar=mat[:, FYB].copy(),
            min_mass=mat[:, FMIN].copy(),
            max_mass=mat[:, FMAX].copy(),
            kind=kind,
            seed=seed,
            replica_id=replica_id,
        )


@dataclass
class DualCoupledRun:
    """Pathwise output of one dual-coupled replica.

    X: potlatch profile at sample times, shape (K, n).
    Y: smoothing family, Y[k, i, j] = Y^(i)_j at sample time k.
    Xtilde: dual reconstruction sum_j x0_j Y^(i)_j, shape (K, n).
    """

    sample_times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Xtilde: np.ndarray


def _event_cap(n_sites: int, horizon: float) -> int:
    return int(20.0 * n_sites * max(horizon, 1.0) + 1000)


def _dense_to_csr(P: np.ndarray):
    n = P.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    cols = []
    vals = []
    for i in range(n):
        nz = np.nonzero(P[i] > 0.0)[0]
        cols.append(nz.astype(np.int64))
        vals.append(P[i, nz])
        indptr[i + 1] = indptr[i] + nz.shape[0]
    return indptr, np.concatenate(cols), np.concatenate(vals)


@lru_cache(maxsize=64)
def _kernel_tables(k: Kernel):
    indptr, indices, data = _dense_to_csr(np.asarray(k.P))
    P2 = np.asarray(k.P) @ np.asarray(k.P)
    p2_indptr, p2_indices, p2_data = _dense_to_csr(P2)
    if k.is_torus:
        d, n = k.torus_shape()
        nbr = torus_neighbors(d, n)
        torus_d = d
    else:
        nbr = np.zeros((k.n_sites, 0), dtype=np.int64)
        torus_d = 0
    return (indptr, indices, data, p2_indptr, p2_indices, p2_data, nbr, torus_d)


def default_mask(k: Kernel) -> int:
    return MASK_ALL if k.is_torus else MASK_GENERAL


def _validate_times(sample_times, horizon: float) -> np.ndarray:
    ts = np.asarray(sample_times, dtype=float)
    if ts.ndim != 1 or ts.shape[0] == 0:
        raise ValueError("sample_times must be a nonempty 1-d sequence")
    if np.any(np.diff(ts) < 0):
        raise ValueError("sample_times must be non-decreasing")
    if ts[0] < 0 or ts[-1] > horizon + 1e-12:
        raise ValueError("sample_times must lie in [0, horizon]")
    return ts


def _build_actions(ts: np.ndarray, deviation: bool, rescale_every: Optional[float],
                   horizon: float):
    """Merge sample times with rescale checkpoints into an action schedule."""
    rec_flag = ACT_RECORD | (ACT_RESCALE if deviation else 0)
    times = list(ts)
    flags = [rec_flag] * len(times)
    if deviation and rescale_every and rescale_every > 0:
        tick = rescale_every
        while tick < horizon:
            times.append(tick)
            flags.append(ACT_RESCALE)
            tick += rescale_every
    order = np.argsort(np.asarray(times), kind="stable")
    at = np.asarray(times, dtype=float)[order]
    af = np.asarray(flags, dtype=np.int64)[order]
    return at, af


def _init_tuple(kernel: Kernel, init, kind: int):
    """Normalize an init spec to (init_kind, a, b, y0).

    Accepts a per-site vector, or ("exponential", mu) /
    ("bernoulli", a, p) / ("lognormal", m, s) for per-replica iid draws.
    """
    n = kernel.n_sites
    if isinstance(init, tuple) and init and isinstance(init[0], str):
        tag = init[0]
        zeros = np.zeros(n)
        if tag == "exponential":
            return INIT_EXPONENTIAL, float(init[1]), 0.0, zeros
        if tag == "bernoulli":
            return INIT_BERNOULLI, float(init[1]), float(init[2]), zeros
        if tag == "lognormal":
            return INIT_LOGNORMAL, float(init[1]), float(init[2]), zeros
        raise ValueError(f"unknown init distribution {tag!r}")
    y0 = np.ascontiguousarray(init, dtype=float)
    if y0.ndim != 1 or y0.shape[0] != n:
        raise DimensionMismatch(f"init has shape {y0.shape}, kernel has {n} sites")
    if kind == KIND_POTLATCH and y0.min() < -1e-12:
        raise NegativeMass(f"potlatch init has negative entry {y0.min()!r}")
    return INIT_FIXED, 0.0, 0.0, y0


def simulate(
    kind: str,
    kernel: Kernel,
    init: np.ndarray,
    horizon: float,
    sample_times: Sequence[float],
    clock: ClockStream,
    *,
    func_mask: Optional[int] = None,
    deviation_mode: bool = False,
    rescale_every: Optional[float] = None,
    check_invariants: bool = False,
    record_profiles: bool = False,
):
    """Run one trajectory; returns (FunctionalSeries, final profile).

    With record_profiles=True also returns the profile snapshot at each
    sample time as a third element (small-scale verification path).
    """
    kcode = {"smoothing": KIND_SMOOTHING, "potlatch": KIND_POTLATCH}[kind]
    ts = _validate_times(sample_times, horizon)
    mask = default_mask(kernel) if func_mask is None else func_mask
    if (mask & (ME | MSD)) and not kernel.is_torus:
        raise NotATorus("energy / summed squared Laplacian need a torus kernel")
    if deviation_mode and kcode != KIND_SMOOTHING:
        raise ValueError("deviation mode applies to smoothing only")

    if clock.events is not None or record_profiles:
        return _simulate_python(kcode, kernel, init, horizon, ts, clock, mask,
                                record_profiles, check_invariants)

    (indptr, indices, data, p2i, p2j, p2v, nbr, torus_d) = _kernel_tables(kernel)
    init_kind, a, b, y0 = _init_tuple(kernel, init, kcode)
    at, af = _build_actions(ts, deviation_mode, rescale_every, horizon)
    try:
        res = core.sim_batch(
            kcode, indptr, indices, data, p2i, p2j, p2v, kernel.pi,
            nbr, torus_d, y0, init_kind, a, b,
            at, af, ts.shape[0], float(horizon),
            clock.replica_id, clock.replica_id + 1, clock.seed,
            mask, deviation_mode, check_invariants,
            True,   # collect_series
            False,  # collect_moments
            False, None, None, False,
            True,   # collect_final
            _event_cap(kernel.n_sites, horizon),
        )
    except OverflowError as exc:
        raise HorizonExceeded(str(exc)) from exc
    if check_invariants and kcode == KIND_POTLATCH:
        total = abs(float(np.sum(y0)))
        if res["max_mass_drift"] > 1e-12 * max(total, 1.0):
            raise NegativeMass(
                f"mass drift {res['max_mass_drift']:.3e} exceeds tolerance"
            )
    mat = res["series"][0]
    if not kernel.is_torus:
        mat[:, FE] = np.nan
        mat[:, FSD] = np.nan
    series = FunctionalSeries.from_matrix(ts, mat, kind, clock.seed, clock.replica_id)
    return series, res["final"][0]


def _simulate_python(kcode, kernel, init, horizon, ts, clock, mask,
                     record_profiles, check_invariants):
    """Step-by-step path used for explicit event lists and profile snapshots."""
    init_kind, _, _, y0 = _init_tuple(kernel, init, kcode)
    assert init_kind == INIT_FIXED
    times, sites = clock.materialize(kernel.n_sites, horizon)
    y = y0.copy()
    total0 = float(y.sum())
    K = ts.shape[0]
    mat = np.zeros((K, NFUNC))
    snaps = np.zeros((K, kernel.n_sites)) if record_profiles else None
    ev = 0
    for k in range(K):
        while ev < times.shape[0] and times[ev] <= ts[k]:
            site = int(sites[ev])
            if kcode == KIND_SMOOTHING:
                y = smoothing_step(y, site, kernel)
            else:
                y = potlatch_step(y, site, kernel)
                if check_invariants:
                    drift = abs(float(y.sum()) - total0)
                    if drift > 1e-12 * max(abs(total0), 1.0):
                        raise NegativeMass(f"mass drift {drift:.3e}")
            ev += 1
        vals = eval_functionals(y, kernel)
        for name in _FUNC_NAMES[:6]:
            mat[k, _FUNC_COLS[name]] = vals[name]
        mat[k, FMIN] = y.min()
        mat[k, FMAX] = y.max()
        if record_profiles:
            snaps[k] = y
    while ev < times.shape[0]:
        site = int(sites[ev])
        y = smoothing_step(y, site, kernel) if kcode == KIND_SMOOTHING else \
            potlatch_step(y, site, kernel)
        ev += 1
    kind = "smoothing" if kcode == KIND_SMOOTHING else "potlatch"
    series = FunctionalSeries.from_matrix(ts, mat, kind, clock.seed, clock.replica_id)
    if record_profiles:
        return series, y, snaps
    return series, y


def smoothing_step(profile: np.ndarray, site: int, kernel: Kernel) -> np.ndarray:
    """One smoothing update: the ringing site takes the kernel-weighted average."""
    y = np.array(profile, dtype=float)
    y[site] = float(kernel.P[site] @ profile)
    return y


def potlatch_step(profile: np.ndarray, site: int, kernel: Kernel) -> np.ndarray:
    """One potlatch update: the ringing site scatters its mass along row `site`."""
    y = np.array(profile, dtype=float)
    if y.min() < -1e-12:
        raise NegativeMass(f"profile has negative entry {y.min()!r}")
    xs = y[site]
    y[site] = 0.0
    y += kernel.P[site] * xs
    return y


def eval_functionals(profile: np.ndarray, kernel: Kernel, include=None) -> dict:
    """Functionals of one profile: V, E, E2, Estar, sum_delta_sq, Ybar.

    E and sum_delta_sq need torus neighbor structure; on general kernels
    they are NaN unless explicitly requested, which raises NotATorus.
    All quadratic forms use pairwise differences (no cancellation near
    consensus).
    """
    y = np.asarray(profile, dtype=float)
    if y.shape[0] != kernel.n_sites:
        raise DimensionMismatch(
            f"profile has {y.shape[0]} entries, kernel has {kernel.n_sites}"
        )
    if include is not None:
        torus_only = {"E", "sum_delta_sq"}
        if (set(include) & torus_only) and not kernel.is_torus:
            raise NotATorus("E / sum_delta_sq are defined on torus kernels only")
    pi = kernel.pi
    m = float(pi @ y)
    out = {"V": float(pi @ (y - m) ** 2)}
    P = np.asarray(kernel.P)
    dv = P @ y - y
    out["Estar"] = float(np.sum((pi * dv) ** 2))
    P2 = P @ P
    diff = y[:, None] - y[None, :]
    out["E2"] = 0.5 * float(np.sum(pi[:, None] * P2 * diff**2))
    out["Ybar"] = float(y.mean())
    if kernel.is_torus:
        d, n = kernel.torus_shape()
        nbr = torus_neighbors(d, n)
        fwd = y[:, None] - y[nbr[:, 0::2]]
        out["E"] = float(np.sum(fwd**2)) / (2.0 * d * kernel.n_sites)
        delta = y[nbr].mean(axis=1) - y
        out["sum_delta_sq"] = float(np.sum(delta**2))
    else:
        out["E"] = float("nan")
        out["sum_delta_sq"] = float("nan")
    if include is not None:
        return {k: out[k] for k in include}
    return out


def run_replicas(
    kind: str,
    kernel: Kernel,
    init,
    horizon: float,
    sample_times: Sequence[float],
    replicas: int,
    seed: int,
    *,
    func_mask: Optional[int] = None,
    deviation_mode: bool = False,
    rescale_every: Optional[float] = None,
    int_weights: Optional[np.ndarray] = None,
    mart_F: Optional[np.ndarray] = None,
    avgmass: bool = False,
    persite_moments: bool = False,
    check_mass: bool = False,
    workers: Optional[int] = None,
) -> dict:
    """Monte-Carlo batch: accumulators over `replicas` trajectories.

    Replicas are split into fixed-size chunks dispatched to a thread
    pool; partial accumulators merge in chunk order, so results are
    identical for any worker count. Returns the merged accumulator dict
    plus bookkeeping keys (replicas, sample_times, func_mask).
    """
    kcode = {"smoothing": KIND_SMOOTHING, "potlatch": KIND_POTLATCH}[kind]
    ts = _validate_times(sample_times, horizon)
    mask = default_mask(kernel) if func_mask is None else func_mask
    if (mask & (ME | MSD)) and not kernel.is_torus:
        raise NotATorus("energy / summed squared Laplacian need a torus kernel")
    if deviation_mode and kcode != KIND_SMOOTHING:
        raise ValueError("deviation mode applies to smoothing only")
    if int_weights is not None:
        int_weights = np.ascontiguousarray(int_weights, dtype=float)
        if int_weights.shape[0] != ts.shape[0]:
            raise DimensionMismatch("int_weights length != sample count")
        if not (mask & ME2) or not (mask & MES):
            raise ValueError("integral accumulation needs E2 and Estar in the mask")
    if mart_F is not None:
        mart_F = np.ascontiguousarray(mart_F, dtype=float)
        if mart_F.shape != (ts.shape[0], kernel.n_sites):
            raise DimensionMismatch("mart_F must be (samples, sites)")
        if deviation_mode:
            raise ValueError("martingale accumulation requires plain mode")

    (indptr, indices, data, p2i, p2j, p2v, nbr, torus_d) = _kernel_tables(kernel)
    ik, a, b, y0 = _init_tuple(kernel, init, kcode)
    at, af = _build_actions(ts, deviation_mode, rescale_every, horizon)
    cap = _event_cap(kernel.n_sites, horizon)

    def run_chunk(r0: int, r1: int) -> dict:
        return core.sim_batch(
            kcode, indptr, indices, data, p2i, p2j, p2v, kernel.pi,
            nbr, torus_d, y0, ik, a, b,
            at, af, ts.shape[0], float(horizon),
            r0, r1, seed, mask, deviation_mode, check_mass,
            False, True, persite_moments, int_weights, mart_F, avgmass,
            False, cap,
        )

    bounds = [(r0, min(r0 + REPLICA_CHUNK, replicas))
              for r0 in range(0, replicas, REPLICA_CHUNK)]
    try:
        parts = _map_chunks(run_chunk, bounds, workers)
    except OverflowError as exc:
        raise HorizonExceeded(str(exc)) from exc
    merged = _merge_accumulators(parts)
    merged["replicas"] = replicas
    merged["sample_times"] = ts
    merged["func_mask"] = mask
    return merged


def run_dual_replicas(
    kernel: Kernel,
    x0: np.ndarray,
    sample_times: Sequence[float],
    replicas: int,
    seed: int,
    *,
    collect_xt_moments: bool = True,
    collect_x_moments: bool = False,
    collect_sq_gap: bool = False,
    memory_cap: int = 10**7,
    workers: Optional[int] = None,
) -> dict:
    """Monte-Carlo batch of dual-coupled runs; see run_replicas for merging."""
    n = kernel.n_sites
    if n * n > memory_cap:
        raise MemoryCapExceeded(f"n^2 = {n * n} exceeds cap {memory_cap}")
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape[0] != n:
        raise DimensionMismatch(f"x0 has {x0.shape[0]} entries, kernel has {n}")
    if x0.min() < -1e-12:
        raise NegativeMass("potlatch initial mass must be nonnegative")
    ts = _validate_times(sample_times, float(sample_times[-1]))
    (indptr, indices, data, *_rest) = _kernel_tables(kernel)
    cap = _event_cap(n, float(ts[-1]))

    def run_chunk(r0: int, r1: int) -> dict:
        return core.dual_batch(
            indptr, indices, data, x0, ts, r0, r1, seed,
            collect_xt_moments, collect_x_moments, collect_sq_gap, False, cap,
        )

    bounds = [(r0, min(r0 + REPLICA_CHUNK, replicas))
              for r0 in range(0, replicas, REPLICA_CHUNK)]
    try:
        parts = _map_chunks(run_chunk, bounds, workers)
    except OverflowError as exc:
        raise HorizonExceeded(str(exc)) from exc
    merged = _merge_accumulators(parts)
    merged["replicas"] = replicas
    merged["sample_times"] = ts
    return merged


def _map_chunks(fn, bounds, workers):
    if workers is None:
        workers = min(8, os.cpu_count() or 1)
    if workers <= 1 or len(bounds) <= 1:
        return [fn(r0, r1) for r0, r1 in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, r0, r1) for r0, r1 in bounds]
        return [f.result() for f in futures]


def _merge_accumulators(parts: list[dict]) -> dict:
    merged = {}
    for part in parts:
        for key, val in part.items():
            if key == "max_mass_drift":
                merged[key] = max(merged.get(key, 0.0), val)
            elif isinstance(val, float):
                merged[key] = merged.get(key, 0.0) + val
            elif key in merged:
                merged[key] += val
            else:
                merged[key] = val.copy()
    return merged


def simulate_dual_coupled(
    kernel: Kernel,
    x0: np.ndarray,
    horizon: float,
    sample_times: Sequence[float],
    clock: ClockStream,
    memory_cap: int = 10**7,
) -> DualCoupledRun:
    """One dual-coupled replica with full pathwise output.

    The potlatch process X and all n smoothing processes Y^(i) (started
    from delta_i) consume the identical (time, site) stream; Xtilde is
    the duality reconstruction from the Y family.
    """
    n = kernel.n_sites
    if n * n > memory_cap:
        raise MemoryCapExceeded(f"n^2 = {n * n} exceeds cap {memory_cap}")
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.min() < -1e-12:
        raise NegativeMass("potlatch initial mass must be nonnegative")
    ts = _validate_times(sample_times, horizon)
    (indptr, indices, data, *_rest) = _kernel_tables(kernel)
    res = core.dual_batch(
        indptr, indices, data, x0, ts,
        clock.replica_id, clock.replica_id + 1, clock.seed,
        False, False, False, True,
        _event_cap(n, horizon),
    )
    return DualCoupledRun(
        sample_times=ts,
        X=res["x_series"][0],
        Y=res["y_series"][0],
        Xtilde=res["xt_series"][0],
    )


def spectral_coords(profile: np.ndarray, spectrum) -> np.ndarray:
    """Coefficients V_j = N^(-1/2) <psi_j, profile> in the given eigenbasis.

    `spectrum` is a TorusSpectrum or a SpectralDecomposition; the
    reconstruction is profile = sum_j N^(1/2) V_j psi_j.
    """
    y = np.asarray(profile, dtype=float)
    if hasattr(spectrum, "eigenbasis"):
        psi, _lam = spectrum.eigenbasis()
    else:
        psi = spectrum.eigenvectors
    if psi.shape[0] != y.shape[0]:
        raise DimensionMismatch(
            f"profile has {y.shape[0]} entries, basis has {psi.shape[0]}"
        )
    return (psi.T @ y) / math.sqrt(y.shape[0])


def reconstruct_from_coords(coords: np.ndarray, spectrum) -> np.ndarray:
    if hasattr(spectrum, "eigenbasis"):
        psi, _lam = spectrum.eigenbasis()
    else:
        psi = spectrum.eigenvectors
    return psi @ (math.sqrt(psi.shape[0]) * np.asarray(coords, dtype=float))


def martingale_series(
    u: float,
    f0: np.ndarray,
    sample_times: Sequence[float],
    profiles: np.ndarray,
    d: int,
    n: int,
) -> np.ndarray:
    """M_f(t_k) = sum_i f(u - t_k, i) Y_i(t_k) with f heat-evolved from f0."""
    from .spectral import heat_evolve

    ts = np.asarray(sample_times, dtype=float)
    if ts[0] < 0 or ts[-1] > u + 1e-12:
        raise ValueError("sample times must lie in [0, u]")
    profiles = np.asarray(profiles, dtype=float)
    out = np.empty(ts.shape[0])
    for k, t in enumerate(ts):
        f = heat_evolve(f0, u - t, d, n)
        out[k] = float(f @ profiles[k])
    return out


def heat_weight_matrix(u: float, f0: np.ndarray, sample_times, d: int, n: int):
    """Rows f(u - t_k, .) for the batch martingale accumulator."""
    from .spectral import heat_evolve

    ts = np.asarray(sample_times, dtype=float)
    F = np.empty((ts.shape[0], n**d))
    for k, t in enumerate(ts):
        F[k] = heat_evolve(f0, u - t, d, n)
    return F
