"""Pure-Python core: event loops, dual coupling, Jacobi eigensolver, Volterra.

Reference implementation of the hot kernels. The compiled extension
(potlatch._core) mirrors these semantics operation-for-operation so that
both backends produce bitwise-identical trajectories; keep any change
here in lockstep with the .pyx file.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_M53 = 1.0 / 9007199254740992.0
_TWO_M54 = _TWO_M53 / 2.0

# functional column layout
FV, FE, FE2, FES, FSD, FYB, FMIN, FMAX = range(8)
NFUNC = 8

# func_mask bits
MV, ME, ME2, MES, MSD, MYB, MMM = 1, 2, 4, 8, 16, 32, 64

# action flag bits
ACT_RECORD, ACT_RESCALE = 1, 2

KIND_SMOOTHING, KIND_POTLATCH = 0, 1
INIT_FIXED, INIT_EXPONENTIAL, INIT_BERNOULLI, INIT_LOGNORMAL = 0, 1, 2, 3


def _mix64(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return z


def stream_state(seed: int, replica_id: int) -> int:
    """Initial splitmix64 state for a (seed, replica) stream."""
    return _mix64((seed & _MASK) ^ (((replica_id + 1) * _GOLDEN) & _MASK))


def _next(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK
    return state, _mix64(state)


def _unit(z: int) -> float:
    # strictly inside (0, 1): safe under log()
    return (z >> 11) * _TWO_M53 + _TWO_M54


def _site(z: int, n: int) -> int:
    return (z * n) >> 64


def clock_events(seed, replica_id, n_sites, horizon, max_events):
    """Materialize the (time, site) event stream of one replica.

    Single Poisson stream of rate n_sites with uniform site marks;
    identical draw order to the simulation loops.
    """
    inv_rate = 1.0 / n_sites
    state = stream_state(seed, replica_id)
    times = []
    sites = []
    t = 0.0
    while True:
        state, z = _next(state)
        t += -math.log(_unit(z)) * inv_rate
        if t > horizon:
            break
        state, z = _next(state)
        times.append(t)
        sites.append(_site(z, n_sites))
        if len(times) > max_events:
            raise OverflowError("event cap exceeded")
    return np.asarray(times, dtype=float), np.asarray(sites, dtype=np.int64)


def _draw_init(state, n, init_kind, init_a, init_b, y0, y):
    if init_kind == INIT_FIXED:
        for i in range(n):
            y[i] = y0[i]
        return state
    if init_kind == INIT_EXPONENTIAL:
        for i in range(n):
            state, z = _next(state)
            y[i] = -init_a * math.log(_unit(z))
        return state
    if init_kind == INIT_BERNOULLI:
        for i in range(n):
            state, z = _next(state)
            y[i] = init_a if _unit(z) < init_b else 0.0
        return state
    if init_kind == INIT_LOGNORMAL:
        for i in range(n):
            state, z1 = _next(state)
            state, z2 = _next(state)
            g = math.sqrt(-2.0 * math.log(_unit(z1))) * math.cos(
                6.283185307179586 * _unit(z2)
            )
            y[i] = math.exp(init_a + init_b * g)
        return state
    raise ValueError(f"unknown init kind {init_kind}")


def _apply_smoothing(y, site, indptr, indices, data):
    acc = 0.0
    for kk in range(indptr[site], indptr[site + 1]):
        acc += data[kk] * y[indices[kk]]
    y[site] = acc


def _apply_potlatch(y, site, indptr, indices, data):
    xs = y[site]
    if xs == 0.0:
        return
    news = 0.0
    for kk in range(indptr[site], indptr[site + 1]):
        j = indices[kk]
        if j == site:
            news = data[kk] * xs
        else:
            y[j] += data[kk] * xs
    y[site] = news


def _functionals(
    y, n, pi, nbr, torus_d, func_mask, scale, base, out
):
    """Masked functional evaluation; quadratic ones scaled by scale**2.

    All quadratic forms are computed from pairwise differences so they
    stay accurate when the profile is near consensus.
    """
    scale2 = scale * scale
    ybar_u = 0.0
    for i in range(n):
        ybar_u += y[i]
    ybar_u /= n
    if func_mask & MV:
        m = 0.0
        for i in range(n):
            m += pi[i] * y[i]
        acc = 0.0
        for i in range(n):
            diff = y[i] - m
            acc += pi[i] * diff * diff
        out[FV] = acc * scale2
    if func_mask & ME:
        acc = 0.0
        for i in range(n):
            for mu in range(torus_d):
                diff = y[i] - y[nbr[i, 2 * mu]]
                acc += diff * diff
        out[FE] = acc * scale2 / (2.0 * torus_d * n)
    if func_mask & MSD:
        inv2d = 1.0 / (2.0 * torus_d)
        acc = 0.0
        for i in range(n):
            dlt = 0.0
            for c in range(2 * torus_d):
                dlt += y[nbr[i, c]] - y[i]
            dlt *= inv2d
            acc += dlt * dlt
        out[FSD] = acc * scale2
    if func_mask & MYB:
        out[FYB] = base + ybar_u * scale
    if func_mask & MMM:
        lo = y[0]
        hi = y[0]
        for i in range(1, n):
            if y[i] < lo:
                lo = y[i]
            if y[i] > hi:
                hi = y[i]
        out[FMIN] = base + lo * scale
        out[FMAX] = base + hi * scale
    return ybar_u


def _functionals_p2(y, n, pi, indptr, indices, data, p2_indptr, p2_indices,
                    p2_data, func_mask, scale, out):
    scale2 = scale * scale
    if func_mask & ME2:
        acc = 0.0
        for j in range(n):
            inner = 0.0
            for kk in range(p2_indptr[j], p2_indptr[j + 1]):
                diff = y[j] - y[p2_indices[kk]]
                inner += p2_data[kk] * diff * diff
            acc += pi[j] * inner
        out[FE2] = 0.5 * acc * scale2
    if func_mask & MES:
        acc = 0.0
        for i in range(n):
            dv = 0.0
            for kk in range(indptr[i], indptr[i + 1]):
                dv += data[kk] * (y[indices[kk]] - y[i])
            v = pi[i] * dv
            acc += v * v
        out[FES] = acc * scale2


def sim_batch(
    kind,
    indptr, indices, data,
    p2_indptr, p2_indices, p2_data,
    pi,
    nbr, torus_d,
    y0, init_kind, init_a, init_b,
    action_times, action_flags, n_records,
    horizon,
    r0, r1, seed,
    func_mask,
    deviation_mode,
    check_mass,
    collect_series,
    collect_moments,
    persite_moments,
    int_weights,
    mart_F,
    avgmass,
    collect_final,
    max_events,
):
    """Simulate replicas [r0, r1) and fill the requested accumulators.

    Returns a dict; see the engine wrapper for the key conventions.
    Raises OverflowError when a replica exceeds max_events.
    """
    n = pi.shape[0]
    inv_rate = 1.0 / n
    n_actions = action_times.shape[0]
    K = n_records
    R = r1 - r0

    out = {}
    sums = sumsq = series = None
    if collect_moments:
        sums = np.zeros((K, NFUNC))
        sumsq = np.zeros((K, NFUNC))
        out["sums"], out["sumsq"] = sums, sumsq
    if collect_series:
        series = np.zeros((R, K, NFUNC))
        out["series"] = series
    if persite_moments:
        pm = [np.zeros((K, n)) for _ in range(4)]
        out["persite_m1"], out["persite_m2"], out["persite_m3"], out["persite_m4"] = pm
    if int_weights is not None:
        out["int_sum"] = 0.0
        out["int_sumsq"] = 0.0
    if mart_F is not None:
        out["mart_sum"] = np.zeros(K)
        out["mart_sumsq"] = np.zeros(K)
    if avgmass:
        out["avg_sum"] = np.zeros(K)
        out["avg_sumsq"] = np.zeros(K)
        ybar_buf = np.zeros(K)
    if collect_final:
        out["final"] = np.zeros((R, n))
    out["max_mass_drift"] = 0.0

    y = np.zeros(n)
    fvals = np.zeros(NFUNC)

    for r in range(r0, r1):
        state = stream_state(seed, r)
        state = _draw_init(state, n, init_kind, init_a, init_b, y0, y)
        base = 0.0
        scale = 1.0
        if deviation_mode:
            m = 0.0
            for i in range(n):
                m += y[i]
            m /= n
            for i in range(n):
                y[i] -= m
            base = m
        total0 = 0.0
        if check_mass:
            for i in range(n):
                total0 += y[i]
        int_acc = 0.0
        ev = 0
        state, z = _next(state)
        t_ev = -math.log(_unit(z)) * inv_rate
        k = 0
        for a in range(n_actions):
            ta = action_times[a]
            while t_ev <= ta:
                state, z = _next(state)
                site = _site(z, n)
                if kind == KIND_SMOOTHING:
                    _apply_smoothing(y, site, indptr, indices, data)
                else:
                    _apply_potlatch(y, site, indptr, indices, data)
                    if check_mass:
                        tot = 0.0
                        for i in range(n):
                            tot += y[i]
                        drift = abs(tot - total0)
                        if drift > out["max_mass_drift"]:
                            out["max_mass_drift"] = drift
                ev += 1
                if ev > max_events:
                    raise OverflowError("event cap exceeded")
                state, z = _next(state)
                t_ev += -math.log(_unit(z)) * inv_rate
            flags = action_flags[a]
            if flags & ACT_RECORD:
                for f in range(NFUNC):
                    fvals[f] = 0.0
                ybar_u = _functionals(
                    y, n, pi, nbr, torus_d, func_mask, scale, base, fvals
                )
                if func_mask & (ME2 | MES):
                    _functionals_p2(
                        y, n, pi, indptr, indices, data,
                        p2_indptr, p2_indices, p2_data, func_mask, scale, fvals,
                    )
                if collect_moments:
                    for f in range(NFUNC):
                        v = fvals[f]
                        sums[k, f] += v
                        sumsq[k, f] += v * v
                if collect_series:
                    for f in range(NFUNC):
                        series[r - r0, k, f] = fvals[f]
                if persite_moments:
                    m1, m2, m3, m4 = (
                        out["persite_m1"], out["persite_m2"],
                        out["persite_m3"], out["persite_m4"],
                    )
                    for i in range(n):
                        v = base + y[i] * scale
                        v2 = v * v
                        m1[k, i] += v
                        m2[k, i] += v2
                        m3[k, i] += v2 * v
                        m4[k, i] += v2 * v2
                if int_weights is not None:
                    int_acc += int_weights[k] * (fvals[FE2] + fvals[FES])
                if mart_F is not None:
                    mv = 0.0
                    for i in range(n):
                        mv += mart_F[k, i] * y[i]
                    out["mart_sum"][k] += mv
                    out["mart_sumsq"][k] += mv * mv
                if avgmass:
                    ybar_buf[k] = base + ybar_u * scale
                k += 1
            if flags & ACT_RESCALE:
                m = 0.0
                for i in range(n):
                    m += y[i]
                m /= n
                for i in range(n):
                    y[i] -= m
                base += m * scale
                amax = 0.0
                for i in range(n):
                    av = abs(y[i])
                    if av > amax:
                        amax = av
                if amax > 0.0:
                    e = math.frexp(amax)[1]
                    factor = math.ldexp(1.0, -e)
                    for i in range(n):
                        y[i] *= factor
                    scale = math.ldexp(scale, e)
        while t_ev <= horizon:
            state, z = _next(state)
            site = _site(z, n)
            if kind == KIND_SMOOTHING:
                _apply_smoothing(y, site, indptr, indices, data)
            else:
                _apply_potlatch(y, site, indptr, indices, data)
                if check_mass:
                    tot = 0.0
                    for i in range(n):
                        tot += y[i]
                    drift = abs(tot - total0)
                    if drift > out["max_mass_drift"]:
                        out["max_mass_drift"] = drift
            ev += 1
            if ev > max_events:
                raise OverflowError("event cap exceeded")
            state, z = _next(state)
            t_ev += -math.log(_unit(z)) * inv_rate
        if int_weights is not None:
            out["int_sum"] += int_acc
            out["int_sumsq"] += int_acc * int_acc
        if avgmass:
            last = ybar_buf[K - 1]
            for kk in range(K):
                v = ybar_buf[kk] - last
                v = v * v
                out["avg_sum"][kk] += v
                out["avg_sumsq"][kk] += v * v
        if collect_final:
            for i in range(n):
                out["final"][r - r0, i] = base + y[i] * scale
    return out


def dual_batch(
    indptr, indices, data,
    x0,
    sample_times,
    r0, r1, seed,
    collect_xt_moments,
    collect_x_moments,
    collect_sq_gap,
    collect_series,
    max_events,
):
    """Dual coupling: potlatch X and the n smoothing processes Y^(i) on one clock.

    Xtilde_i(t) = sum_j x0_j Y^(i)_j(t). The last sample time doubles as
    the stand-in for the t = infinity limit in the gap statistic
    sum_i (Xtilde_i(t_k) - Xtilde_i(t_last))^2.
    """
    n = x0.shape[0]
    inv_rate = 1.0 / n
    K = sample_times.shape[0]
    R = r1 - r0

    out = {}
    if collect_xt_moments:
        out["xt_m1"] = np.zeros((K, n))
        out["xt_m2"] = np.zeros((K, n))
        out["xt_m3"] = np.zeros((K, n))
        out["xt_m4"] = np.zeros((K, n))
    if collect_x_moments:
        out["x_m1"] = np.zeros((K, n))
        out["x_m2"] = np.zeros((K, n))
    if collect_sq_gap:
        out["gap_sum"] = np.zeros(K)
        out["gap_sumsq"] = np.zeros(K)
    if collect_series:
        out["x_series"] = np.zeros((R, K, n))
        out["y_series"] = np.zeros((R, K, n, n))
        out["xt_series"] = np.zeros((R, K, n))

    x = np.zeros(n)
    Y = np.zeros((n, n))
    yrow = np.zeros(n)
    xt = np.zeros((K, n))

    for r in range(r0, r1):
        state = stream_state(seed, r)
        for i in range(n):
            x[i] = x0[i]
            for j in range(n):
                Y[i, j] = 1.0 if i == j else 0.0
        ev = 0
        state, z = _next(state)
        t_ev = -math.log(_unit(z)) * inv_rate
        for k in range(K):
            ta = sample_times[k]
            while t_ev <= ta:
                state, z = _next(state)
                site = _site(z, n)
                _apply_potlatch(x, site, indptr, indices, data)
                for i in range(n):
                    acc = 0.0
                    for kk in range(indptr[site], indptr[site + 1]):
                        acc += data[kk] * Y[i, indices[kk]]
                    yrow[i] = acc
                for i in range(n):
                    Y[i, site] = yrow[i]
                ev += 1
                if ev > max_events:
                    raise OverflowError("event cap exceeded")
                state, z = _next(state)
                t_ev += -math.log(_unit(z)) * inv_rate
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += x0[j] * Y[i, j]
                xt[k, i] = acc
            if collect_xt_moments:
                for i in range(n):
                    v = xt[k, i]
                    v2 = v * v
                    out["xt_m1"][k, i] += v
                    out["xt_m2"][k, i] += v2
                    out["xt_m3"][k, i] += v2 * v
                    out["xt_m4"][k, i] += v2 * v2
            if collect_x_moments:
                for i in range(n):
                    v = x[i]
                    out["x_m1"][k, i] += v
                    out["x_m2"][k, i] += v * v
            if collect_series:
                for i in range(n):
                    out["x_series"][r - r0, k, i] = x[i]
                    out["xt_series"][r - r0, k, i] = xt[k, i]
                    for j in range(n):
                        out["y_series"][r - r0, k, i, j] = Y[i, j]
        if collect_sq_gap:
            for k in range(K):
                s = 0.0
                for i in range(n):
                    diff = xt[k, i] - xt[K - 1, i]
                    s += diff * diff
                out["gap_sum"][k] += s
                out["gap_sumsq"][k] += s * s
    return out


def jacobi_eigh(A, max_sweeps=60):
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Returns (eigenvalues_unsorted, eigenvectors_in_columns, converged).
    """
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return np.array([A[0, 0]]), V, True
    anorm = float(np.abs(A).max())
    if anorm == 0.0:
        return np.zeros(n), V, True
    tol = 1e-15 * anorm
    converged = False
    for _ in range(max_sweeps):
        off = float(np.abs(np.triu(A, 1)).max())
        if off <= tol:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    tt = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    tt = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + tt * tt)
                s = tt * c
                akp = A[:, p].copy()
                akq = A[:, q].copy()
                A[:, p] = c * akp - s * akq
                A[:, q] = s * akp + c * akq
                apk = A[p, :].copy()
                aqk = A[q, :].copy()
                A[p, :] = c * apk - s * aqk
                A[q, :] = s * apk + c * aqk
                A[p, q] = 0.0
                A[q, p] = 0.0
                vkp = V[:, p].copy()
                vkq = V[:, q].copy()
                V[:, p] = c * vkp - s * vkq
                V[:, q] = s * vkp + c * vkq
    else:
        off = float(np.abs(np.triu(A, 1)).max())
        converged = off <= tol
    return np.diagonal(A).copy(), V, converged


def conv_trapz(f, g, h):
    """Convolution (f*g)(t_k) on a uniform grid by the product trapezoid rule."""
    m = f.shape[0]
    out = np.zeros(m)
    for k in range(1, m):
        acc = 0.5 * (f[0] * g[k] + f[k] * g[0])
        if k >= 2:
            acc += float(np.dot(f[1:k], g[k - 1:0:-1]))
        out[k] = h * acc
    return out


def volterra_solve(g, h):
    """Forward substitution for H = G + G*H with the product trapezoid rule."""
    m = g.shape[0]
    H = np.zeros(m)
    H[0] = g[0]
    denom = 1.0 - 0.5 * h * g[0]
    for k in range(1, m):
        acc = 0.5 * g[k] * H[0]
        if k >= 2:
            acc += float(np.dot(g[k - 1:0:-1], H[1:k]))
        H[k] = (g[k] + h * acc) / denom
    return H
