# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core: event loops, dual coupling, Jacobi eigensolver, Volterra.

Mirrors potlatch._core_py operation-for-operation; the two backends must
produce bitwise-identical trajectories. Keep in lockstep.
"""

import numpy as np

from libc.math cimport cos, exp, fabs, frexp, ldexp, log, sqrt

BACKEND_NAME = "compiled"

ctypedef unsigned long long u64

cdef extern from *:
    ctypedef unsigned long long u128 "unsigned __int128"

cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double TWO_M54 = 0.5 / 9007199254740992.0
cdef u64 GOLDEN = <u64>0x9E3779B97F4A7C15
cdef double TWO_PI = 6.283185307179586

# functional column layout (mirrors _core_py)
FV, FE, FE2, FES, FSD, FYB, FMIN, FMAX = range(8)
NFUNC = 8
MV, ME, ME2, MES, MSD, MYB, MMM = 1, 2, 4, 8, 16, 32, 64
ACT_RECORD, ACT_RESCALE = 1, 2
KIND_SMOOTHING, KIND_POTLATCH = 0, 1
INIT_FIXED, INIT_EXPONENTIAL, INIT_BERNOULLI, INIT_LOGNORMAL = 0, 1, 2, 3

cdef enum:
    C_FV, C_FE, C_FE2, C_FES, C_FSD, C_FYB, C_FMIN, C_FMAX

cdef enum:
    C_MV = 1
    C_ME = 2
    C_ME2 = 4
    C_MES = 8
    C_MSD = 16
    C_MYB = 32
    C_MMM = 64


cdef inline u64 _mix64(u64 z) noexcept nogil:
    z ^= z >> 30
    z = z * <u64>0xBF58476D1CE4E5B9
    z ^= z >> 27
    z = z * <u64>0x94D049BB133111EB
    z ^= z >> 31
    return z


cdef inline u64 _state0(u64 seed, u64 replica) noexcept nogil:
    return _mix64(seed ^ ((replica + 1) * GOLDEN))


cdef inline u64 _next_z(u64 *state) noexcept nogil:
    state[0] = state[0] + GOLDEN
    return _mix64(state[0])


cdef inline double _unit(u64 z) noexcept nogil:
    return (z >> 11) * TWO_M53 + TWO_M54


cdef inline long long _site(u64 z, u64 n) noexcept nogil:
    return <long long>((<u128>z * <u128>n) >> 64)


def stream_state(seed, replica_id):
    """Initial splitmix64 state for a (seed, replica) stream."""
    return int(_state0(<u64>(seed & 0xFFFFFFFFFFFFFFFF), <u64>replica_id))


def clock_events(seed, replica_id, n_sites, horizon, max_events):
    """Materialize the (time, site) event stream of one replica."""
    cdef u64 state = _state0(<u64>(seed & 0xFFFFFFFFFFFFFFFF), <u64>replica_id)
    cdef u64 n = <u64>n_sites
    cdef double inv_rate = 1.0 / n_sites
    cdef double hor = horizon
    cdef double t = 0.0
    cdef long long cap = max_events
    times = []
    sites = []
    while True:
        t += -log(_unit(_next_z(&state))) * inv_rate
        if t > hor:
            break
        times.append(t)
        sites.append(_site(_next_z(&state), n))
        if len(times) > cap:
            raise OverflowError("event cap exceeded")
    return np.asarray(times, dtype=float), np.asarray(sites, dtype=np.int64)


cdef inline u64 _draw_init(u64 state, long long n, int init_kind, double init_a,
                           double init_b, const double[::1] y0, double[::1] y) noexcept nogil:
    cdef long long i
    cdef double u, g
    if init_kind == 0:
        for i in range(n):
            y[i] = y0[i]
    elif init_kind == 1:
        for i in range(n):
            y[i] = -init_a * log(_unit(_next_z(&state)))
    elif init_kind == 2:
        for i in range(n):
            y[i] = init_a if _unit(_next_z(&state)) < init_b else 0.0
    elif init_kind == 3:
        for i in range(n):
            u = _unit(_next_z(&state))
            g = sqrt(-2.0 * log(u)) * cos(TWO_PI * _unit(_next_z(&state)))
            y[i] = exp(init_a + init_b * g)
    return state


cdef inline void _apply_smoothing(double[::1] y, long long site,
                                  const long long[::1] indptr,
                                  const long long[::1] indices,
                                  const double[::1] data) noexcept nogil:
    cdef double acc = 0.0
    cdef long long kk
    for kk in range(indptr[site], indptr[site + 1]):
        acc += data[kk] * y[indices[kk]]
    y[site] = acc


cdef inline void _apply_potlatch(double[::1] y, long long site,
                                 const long long[::1] indptr,
                                 const long long[::1] indices,
                                 const double[::1] data) noexcept nogil:
    cdef double xs = y[site]
    cdef double news = 0.0
    cdef long long kk, j
    if xs == 0.0:
        return
    for kk in range(indptr[site], indptr[site + 1]):
        j = indices[kk]
        if j == site:
            news = data[kk] * xs
        else:
            y[j] += data[kk] * xs
    y[site] = news


cdef inline double _functionals(const double[::1] y, long long n,
                                const double[::1] pi,
                                const long long[:, ::1] nbr, int torus_d,
                                int func_mask, double scale, double base,
                                double *out) noexcept nogil:
    cdef double scale2 = scale * scale
    cdef double ybar_u = 0.0, m, acc, diff, dlt, inv2d, lo, hi
    cdef long long i
    cdef int mu, c
    for i in range(n):
        ybar_u += y[i]
    ybar_u /= n
    if func_mask & C_MV:
        m = 0.0
        for i in range(n):
            m += pi[i] * y[i]
        acc = 0.0
        for i in range(n):
            diff = y[i] - m
            acc += pi[i] * diff * diff
        out[C_FV] = acc * scale2
    if func_mask & C_ME:
        acc = 0.0
        for i in range(n):
            for mu in range(torus_d):
                diff = y[i] - y[nbr[i, 2 * mu]]
                acc += diff * diff
        out[C_FE] = acc * scale2 / (2.0 * torus_d * n)
    if func_mask & C_MSD:
        inv2d = 1.0 / (2.0 * torus_d)
        acc = 0.0
        for i in range(n):
            dlt = 0.0
            for c in range(2 * torus_d):
                dlt += y[nbr[i, c]] - y[i]
            dlt *= inv2d
            acc += dlt * dlt
        out[C_FSD] = acc * scale2
    if func_mask & C_MYB:
        out[C_FYB] = base + ybar_u * scale
    if func_mask & C_MMM:
        lo = y[0]
        hi = y[0]
        for i in range(1, n):
            if y[i] < lo:
                lo = y[i]
            if y[i] > hi:
                hi = y[i]
        out[C_FMIN] = base + lo * scale
        out[C_FMAX] = base + hi * scale
    return ybar_u


cdef inline void _functionals_p2(const double[::1] y, long long n,
                                 const double[::1] pi,
                                 const long long[::1] indptr,
                                 const long long[::1] indices,
                                 const double[::1] data,
                                 const long long[::1] p2_indptr,
                                 const long long[::1] p2_indices,
                                 const double[::1] p2_data,
                                 int func_mask, double scale,
                                 double *out) noexcept nogil:
    cdef double scale2 = scale * scale
    cdef double acc, inner, diff, dv, v
    cdef long long j, kk, i
    if func_mask & C_ME2:
        acc = 0.0
        for j in range(n):
            inner = 0.0
            for kk in range(p2_indptr[j], p2_indptr[j + 1]):
                diff = y[j] - y[p2_indices[kk]]
                inner += p2_data[kk] * diff * diff
            acc += pi[j] * inner
        out[C_FE2] = 0.5 * acc * scale2
    if func_mask & C_MES:
        acc = 0.0
        for i in range(n):
            dv = 0.0
            for kk in range(indptr[i], indptr[i + 1]):
                dv += data[kk] * (y[indices[kk]] - y[i])
            v = pi[i] * dv
            acc += v * v
        out[C_FES] = acc * scale2


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
    """Simulate replicas [r0, r1) and fill the requested accumulators."""
    cdef const long long[::1] ip = indptr
    cdef const long long[::1] ix = indices
    cdef const double[::1] dv = data
    cdef const long long[::1] p2ip = p2_indptr
    cdef const long long[::1] p2ix = p2_indices
    cdef const double[::1] p2dv = p2_data
    cdef const double[::1] piv = pi
    cdef const long long[:, ::1] nbrv = nbr
    cdef const double[::1] y0v = y0
    cdef const double[::1] atv = action_times
    cdef const long long[::1] afv = action_flags

    cdef long long n = piv.shape[0]
    cdef double inv_rate = 1.0 / n
    cdef long long n_actions = atv.shape[0]
    cdef long long K = n_records
    cdef long long R = r1 - r0
    cdef int c_kind = kind
    cdef int c_initk = init_kind
    cdef double c_ia = init_a, c_ib = init_b
    cdef double hor = horizon
    cdef int c_mask = func_mask
    cdef int c_torusd = torus_d
    cdef bint c_dev = deviation_mode
    cdef bint c_chk = check_mass
    cdef bint c_ser = collect_series
    cdef bint c_mom = collect_moments
    cdef bint c_psm = persite_moments
    cdef bint c_avg = avgmass
    cdef bint c_fin = collect_final
    cdef bint has_int = int_weights is not None
    cdef bint has_mart = mart_F is not None
    cdef long long cap = max_events
    cdef long long c_r0 = r0
    cdef long long c_r1 = r1
    cdef u64 c_seed = <u64>(seed & 0xFFFFFFFFFFFFFFFF)

    out = {}
    dummy = np.zeros(1)
    dummy2 = np.zeros((1, 1))
    sums_a = np.zeros((K, NFUNC)) if c_mom else dummy2
    sumsq_a = np.zeros((K, NFUNC)) if c_mom else dummy2
    series_a = np.zeros((R, K, NFUNC)) if c_ser else np.zeros((1, 1, 1))
    pm1_a = np.zeros((K, n)) if c_psm else dummy2
    pm2_a = np.zeros((K, n)) if c_psm else dummy2
    pm3_a = np.zeros((K, n)) if c_psm else dummy2
    pm4_a = np.zeros((K, n)) if c_psm else dummy2
    iw_a = int_weights if has_int else dummy
    mf_a = mart_F if has_mart else dummy2
    msum_a = np.zeros(K) if has_mart else dummy
    msq_a = np.zeros(K) if has_mart else dummy
    asum_a = np.zeros(K) if c_avg else dummy
    asq_a = np.zeros(K) if c_avg else dummy
    final_a = np.zeros((R, n)) if c_fin else dummy2
    ybuf_a = np.zeros(K if c_avg else 1)
    y_a = np.zeros(n)

    cdef double[:, ::1] sums = sums_a
    cdef double[:, ::1] sumsq = sumsq_a
    cdef double[:, :, ::1] series = series_a
    cdef double[:, ::1] pm1 = pm1_a
    cdef double[:, ::1] pm2 = pm2_a
    cdef double[:, ::1] pm3 = pm3_a
    cdef double[:, ::1] pm4 = pm4_a
    cdef const double[::1] iw = iw_a
    cdef const double[:, :] mf = mf_a
    cdef double[::1] msum = msum_a
    cdef double[::1] msq = msq_a
    cdef double[::1] asum = asum_a
    cdef double[::1] asq = asq_a
    cdef double[:, ::1] final = final_a
    cdef double[::1] ybuf = ybuf_a
    cdef double[::1] y = y_a

    cdef double int_sum = 0.0, int_sumsq = 0.0, max_drift = 0.0
    cdef int err = 0

    cdef long long r, i, k, a, ev, site, kk, f
    cdef u64 state
    cdef double base, scale, total0, tot, drift, int_acc, t_ev, ta, m, amax, av
    cdef double v, v2, mv_, factor, last, ybar_u
    cdef int e_exp, flags
    cdef double fvals[8]

    with nogil:
        for r in range(c_r0, c_r1):
            state = _state0(c_seed, <u64>r)
            state = _draw_init(state, n, c_initk, c_ia, c_ib, y0v, y)
            base = 0.0
            scale = 1.0
            if c_dev:
                m = 0.0
                for i in range(n):
                    m += y[i]
                m /= n
                for i in range(n):
                    y[i] -= m
                base = m
            total0 = 0.0
            if c_chk:
                for i in range(n):
                    total0 += y[i]
            int_acc = 0.0
            ev = 0
            t_ev = -log(_unit(_next_z(&state))) * inv_rate
            k = 0
            for a in range(n_actions):
                ta = atv[a]
                while t_ev <= ta:
                    site = _site(_next_z(&state), <u64>n)
                    if c_kind == 0:
                        _apply_smoothing(y, site, ip, ix, dv)
                    else:
                        _apply_potlatch(y, site, ip, ix, dv)
                        if c_chk:
                            tot = 0.0
                            for i in range(n):
                                tot += y[i]
                            drift = fabs(tot - total0)
                            if drift > max_drift:
                                max_drift = drift
                    ev += 1
                    if ev > cap:
                        err = 1
                        break
                    t_ev += -log(_unit(_next_z(&state))) * inv_rate
                if err:
                    break
                flags = <int>afv[a]
                if flags & 1:  # ACT_RECORD
                    for f in range(8):
                        fvals[f] = 0.0
                    ybar_u = _functionals(y, n, piv, nbrv, c_torusd, c_mask,
                                          scale, base, fvals)
                    if c_mask & (C_ME2 | C_MES):
                        _functionals_p2(y, n, piv, ip, ix, dv, p2ip, p2ix, p2dv,
                                        c_mask, scale, fvals)
                    if c_mom:
                        for f in range(8):
                            v = fvals[f]
                            sums[k, f] += v
                            sumsq[k, f] += v * v
                    if c_ser:
                        for f in range(8):
                            series[r - c_r0, k, f] = fvals[f]
                    if c_psm:
                        for i in range(n):
                            v = base + y[i] * scale
                            v2 = v * v
                            pm1[k, i] += v
                            pm2[k, i] += v2
                            pm3[k, i] += v2 * v
                            pm4[k, i] += v2 * v2
                    if has_int:
                        int_acc += iw[k] * (fvals[C_FE2] + fvals[C_FES])
                    if has_mart:
                        mv_ = 0.0
                        for i in range(n):
                            mv_ += mf[k, i] * y[i]
                        msum[k] += mv_
                        msq[k] += mv_ * mv_
                    if c_avg:
                        ybuf[k] = base + ybar_u * scale
                    k += 1
                if flags & 2:  # ACT_RESCALE
                    m = 0.0
                    for i in range(n):
                        m += y[i]
                    m /= n
                    for i in range(n):
                        y[i] -= m
                    base += m * scale
                    amax = 0.0
                    for i in range(n):
                        av = fabs(y[i])
                        if av > amax:
                            amax = av
                    if amax > 0.0:
                        frexp(amax, &e_exp)
                        factor = ldexp(1.0, -e_exp)
                        for i in range(n):
                            y[i] *= factor
                        scale = ldexp(scale, e_exp)
            if err:
                break
            while t_ev <= hor:
                site = _site(_next_z(&state), <u64>n)
                if c_kind == 0:
                    _apply_smoothing(y, site, ip, ix, dv)
                else:
                    _apply_potlatch(y, site, ip, ix, dv)
                    if c_chk:
                        tot = 0.0
                        for i in range(n):
                            tot += y[i]
                        drift = fabs(tot - total0)
                        if drift > max_drift:
                            max_drift = drift
                ev += 1
                if ev > cap:
                    err = 1
                    break
                t_ev += -log(_unit(_next_z(&state))) * inv_rate
            if err:
                break
            if has_int:
                int_sum += int_acc
                int_sumsq += int_acc * int_acc
            if c_avg:
                last = ybuf[K - 1]
                for kk in range(K):
                    v = ybuf[kk] - last
                    v = v * v
                    asum[kk] += v
                    asq[kk] += v * v
            if c_fin:
                for i in range(n):
                    final[r - c_r0, i] = base + y[i] * scale

    if err:
        raise OverflowError("event cap exceeded")
    if c_mom:
        out["sums"], out["sumsq"] = sums_a, sumsq_a
    if c_ser:
        out["series"] = series_a
    if c_psm:
        out["persite_m1"], out["persite_m2"] = pm1_a, pm2_a
        out["persite_m3"], out["persite_m4"] = pm3_a, pm4_a
    if has_int:
        out["int_sum"] = int_sum
        out["int_sumsq"] = int_sumsq
    if has_mart:
        out["mart_sum"] = msum_a
        out["mart_sumsq"] = msq_a
    if c_avg:
        out["avg_sum"] = asum_a
        out["avg_sumsq"] = asq_a
    if c_fin:
        out["final"] = final_a
    out["max_mass_drift"] = max_drift
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
    """Dual coupling: potlatch X and n smoothing processes Y^(i) on one clock."""
    cdef const long long[::1] ip = indptr
    cdef const long long[::1] ix = indices
    cdef const double[::1] dv = data
    cdef const double[::1] x0v = x0
    cdef const double[::1] tsv = sample_times

    cdef long long n = x0v.shape[0]
    cdef double inv_rate = 1.0 / n
    cdef long long K = tsv.shape[0]
    cdef long long R = r1 - r0
    cdef bint c_xtm = collect_xt_moments
    cdef bint c_xm = collect_x_moments
    cdef bint c_gap = collect_sq_gap
    cdef bint c_ser = collect_series
    cdef long long cap = max_events
    cdef long long c_r0 = r0
    cdef long long c_r1 = r1
    cdef u64 c_seed = <u64>(seed & 0xFFFFFFFFFFFFFFFF)

    out = {}
    dummy2 = np.zeros((1, 1))
    dummy1 = np.zeros(1)
    xtm1_a = np.zeros((K, n)) if c_xtm else dummy2
    xtm2_a = np.zeros((K, n)) if c_xtm else dummy2
    xtm3_a = np.zeros((K, n)) if c_xtm else dummy2
    xtm4_a = np.zeros((K, n)) if c_xtm else dummy2
    xm1_a = np.zeros((K, n)) if c_xm else dummy2
    xm2_a = np.zeros((K, n)) if c_xm else dummy2
    gsum_a = np.zeros(K) if c_gap else dummy1
    gsq_a = np.zeros(K) if c_gap else dummy1
    xs_a = np.zeros((R, K, n)) if c_ser else np.zeros((1, 1, 1))
    ys_a = np.zeros((R, K, n, n)) if c_ser else np.zeros((1, 1, 1, 1))
    xts_a = np.zeros((R, K, n)) if c_ser else np.zeros((1, 1, 1))

    cdef double[:, ::1] xtm1 = xtm1_a
    cdef double[:, ::1] xtm2 = xtm2_a
    cdef double[:, ::1] xtm3 = xtm3_a
    cdef double[:, ::1] xtm4 = xtm4_a
    cdef double[:, ::1] xm1 = xm1_a
    cdef double[:, ::1] xm2 = xm2_a
    cdef double[::1] gsum = gsum_a
    cdef double[::1] gsq = gsq_a
    cdef double[:, :, ::1] xs = xs_a
    cdef double[:, :, :, ::1] ys = ys_a
    cdef double[:, :, ::1] xts = xts_a

    x_a = np.zeros(n)
    Y_a = np.zeros((n, n))
    yrow_a = np.zeros(n)
    xt_a = np.zeros((K, n))
    cdef double[::1] x = x_a
    cdef double[:, ::1] Y = Y_a
    cdef double[::1] yrow = yrow_a
    cdef double[:, ::1] xt = xt_a

    cdef int err = 0
    cdef long long r, i, j, k, kk, ev, site
    cdef u64 state
    cdef double t_ev, ta, acc, v, v2, s, diff

    with nogil:
        for r in range(c_r0, c_r1):
            state = _state0(c_seed, <u64>r)
            for i in range(n):
                x[i] = x0v[i]
                for j in range(n):
                    Y[i, j] = 1.0 if i == j else 0.0
            ev = 0
            t_ev = -log(_unit(_next_z(&state))) * inv_rate
            for k in range(K):
                ta = tsv[k]
                while t_ev <= ta:
                    site = _site(_next_z(&state), <u64>n)
                    _apply_potlatch(x, site, ip, ix, dv)
                    for i in range(n):
                        acc = 0.0
                        for kk in range(ip[site], ip[site + 1]):
                            acc += dv[kk] * Y[i, ix[kk]]
                        yrow[i] = acc
                    for i in range(n):
                        Y[i, site] = yrow[i]
                    ev += 1
                    if ev > cap:
                        err = 1
                        break
                    t_ev += -log(_unit(_next_z(&state))) * inv_rate
                if err:
                    break
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += x0v[j] * Y[i, j]
                    xt[k, i] = acc
                if c_xtm:
                    for i in range(n):
                        v = xt[k, i]
                        v2 = v * v
                        xtm1[k, i] += v
                        xtm2[k, i] += v2
                        xtm3[k, i] += v2 * v
                        xtm4[k, i] += v2 * v2
                if c_xm:
                    for i in range(n):
                        v = x[i]
                        xm1[k, i] += v
                        xm2[k, i] += v * v
                if c_ser:
                    for i in range(n):
                        xs[r - c_r0, k, i] = x[i]
                        xts[r - c_r0, k, i] = xt[k, i]
                        for j in range(n):
                            ys[r - c_r0, k, i, j] = Y[i, j]
            if err:
                break
            if c_gap:
                for k in range(K):
                    s = 0.0
                    for i in range(n):
                        diff = xt[k, i] - xt[K - 1, i]
                        s += diff * diff
                    gsum[k] += s
                    gsq[k] += s * s

    if err:
        raise OverflowError("event cap exceeded")
    if c_xtm:
        out["xt_m1"], out["xt_m2"] = xtm1_a, xtm2_a
        out["xt_m3"], out["xt_m4"] = xtm3_a, xtm4_a
    if c_xm:
        out["x_m1"], out["x_m2"] = xm1_a, xm2_a
    if c_gap:
        out["gap_sum"], out["gap_sumsq"] = gsum_a, gsq_a
    if c_ser:
        out["x_series"], out["y_series"], out["xt_series"] = xs_a, ys_a, xts_a
    return out


def jacobi_eigh(A, max_sweeps=60):
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Returns (eigenvalues_unsorted, eigenvectors_in_columns, converged).
    """
    A_a = np.array(A, dtype=float, copy=True)
    cdef long long n = A_a.shape[0]
    V_a = np.eye(n)
    if n == 1:
        return np.array([A_a[0, 0]]), V_a, True
    cdef double[:, ::1] a = A_a
    cdef double[:, ::1] vv = V_a
    cdef double anorm = 0.0, off, tol, apq, theta, tt, c, s
    cdef double akp, akq, apk, aqk, vkp, vkq
    cdef long long p, q, kk
    cdef int sweep, max_sw = max_sweeps
    cdef bint converged = False

    for p in range(n):
        for q in range(n):
            if fabs(a[p, q]) > anorm:
                anorm = fabs(a[p, q])
    if anorm == 0.0:
        return np.zeros(n), V_a, True
    tol = 1e-15 * anorm

    with nogil:
        for sweep in range(max_sw):
            off = 0.0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    if fabs(a[p, q]) > off:
                        off = fabs(a[p, q])
            if off <= tol:
                converged = True
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if fabs(apq) <= 1e-300:
                        a[p, q] = 0.0
                        a[q, p] = 0.0
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if theta >= 0.0:
                        tt = 1.0 / (theta + sqrt(1.0 + theta * theta))
                    else:
                        tt = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                    c = 1.0 / sqrt(1.0 + tt * tt)
                    s = tt * c
                    for kk in range(n):
                        akp = a[kk, p]
                        akq = a[kk, q]
                        a[kk, p] = c * akp - s * akq
                        a[kk, q] = s * akp + c * akq
                    for kk in range(n):
                        apk = a[p, kk]
                        aqk = a[q, kk]
                        a[p, kk] = c * apk - s * aqk
                        a[q, kk] = s * apk + c * aqk
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for kk in range(n):
                        vkp = vv[kk, p]
                        vkq = vv[kk, q]
                        vv[kk, p] = c * vkp - s * vkq
                        vv[kk, q] = s * vkp + c * vkq
        if not converged:
            off = 0.0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    if fabs(a[p, q]) > off:
                        off = fabs(a[p, q])
            if off <= tol:
                converged = True

    return np.diagonal(A_a).copy(), V_a, bool(converged)


def conv_trapz(f, g, h):
    """Convolution (f*g)(t_k) on a uniform grid by the product trapezoid rule."""
    cdef const double[::1] fv = f
    cdef const double[::1] gv = g
    cdef long long m = fv.shape[0]
    out_a = np.zeros(m)
    cdef double[::1] out = out_a
    cdef double hh = h
    cdef double acc
    cdef long long k, j
    with nogil:
        for k in range(1, m):
            acc = 0.5 * (fv[0] * gv[k] + fv[k] * gv[0])
            for j in range(1, k):
                acc += fv[j] * gv[k - j]
            out[k] = hh * acc
    return out_a


def volterra_solve(g, h):
    """Forward substitution for H = G + G*H with the product trapezoid rule."""
    cdef const double[::1] gv = g
    cdef long long m = gv.shape[0]
    H_a = np.zeros(m)
    cdef double[::1] H = H_a
    cdef double hh = h
    cdef double denom = 1.0 - 0.5 * hh * gv[0]
    cdef double acc
    cdef long long k, j
    H[0] = gv[0]
    with nogil:
        for k in range(1, m):
            acc = 0.5 * gv[k] * H[0]
            for j in range(1, k):
                acc += gv[k - j] * H[j]
            H[k] = (gv[k] + hh * acc) / denom
    return H_a
