# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels (Cython + OpenMP).

Mirrors :mod:`boltzgrad._pykernels` function for function.  Pairs within a
step are disjoint, so the per-pair loops run in parallel; every pair reads
its random numbers from its own Philox counter, so results do not depend on
the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport cos, sin, sqrt, pow, NAN, M_PI
from libc.stdint cimport uint32_t, uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "compiled"

DEF TAG_SHUFFLE = 2
DEF TAG_ACCEPT = 3
DEF TAG_ANGLES = 4
DEF REAL = 1
DEF TOL_U = 1e-12
DEF TOL_THETA = 1e-12
DEF GUARD_REL = 1e-12
DEF AXIS_SWITCH = 0.5
DEF INV_2_52 = 1.0 / 4503599627370496.0


cdef inline void philox(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3,
                        uint32_t k0, uint32_t k1, uint32_t* out) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t n0, n1, n2, n3
    cdef int r
    for r in range(10):
        p0 = <uint64_t>c0 * <uint64_t>0xD2511F53
        p1 = <uint64_t>c2 * <uint64_t>0xCD9E8D57
        n0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        n1 = <uint32_t>p1
        n2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        n3 = <uint32_t>p0
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = k0 + <uint32_t>0x9E3779B9
        k1 = k1 + <uint32_t>0xBB67AE85
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline double to_uniform(uint32_t hi, uint32_t lo) noexcept nogil:
    return (<double>(hi >> 6) * 67108864.0 + <double>(lo >> 6) + 0.5) * INV_2_52


cdef inline void uniform2(uint64_t seed, uint64_t c0, uint64_t c1, uint32_t tag,
                          double* u) noexcept nogil:
    cdef uint32_t w[4]
    philox(<uint32_t>c0, <uint32_t>c1, tag, 0, <uint32_t>seed, <uint32_t>(seed >> 32), w)
    u[0] = to_uniform(w[0], w[1])
    u[1] = to_uniform(w[2], w[3])


cdef inline double velocity_part(double un, double beta) noexcept nogil:
    if beta == 0.0:
        return 1.0
    if beta == 1.0:
        return un
    if beta == 2.0:
        return un * un
    return pow(un, beta)


cdef inline void sigma_from_cos(const double* alpha, double cos_t, double phi,
                                double* out) noexcept nogil:
    cdef double a0 = alpha[0], a1 = alpha[1], a2 = alpha[2]
    cdef bint perm = a0 * a0 + a1 * a1 < AXIS_SWITCH
    cdef double ax, ay, az, r, s1, s2, sin_t, x, y, z
    if perm:
        ax, ay, az = a1, a2, a0
    else:
        ax, ay, az = a0, a1, a2
    sin_t = sqrt(max((1.0 - cos_t) * (1.0 + cos_t), 0.0))
    r = sqrt(ax * ax + ay * ay)
    s1 = sin_t * cos(phi)
    s2 = sin_t * sin(phi)
    x = (ax * az * s1 - ay * s2) / r + ax * cos_t
    y = (ay * az * s1 + ax * s2) / r + ay * cos_t
    z = -r * s1 + az * cos_t
    if perm:
        out[0], out[1], out[2] = z, x, y
    else:
        out[0], out[1], out[2] = x, y, z


cdef inline void g_action(const double* alpha, const double* sigma, const double* w,
                          double* out) noexcept nogil:
    cdef bint perm = alpha[0] * alpha[0] + alpha[1] * alpha[1] < AXIS_SWITCH
    cdef double ax, ay, az, sx, sy, sz, wx, wy, wz, r2, k, hs, hw, lam, o0, o1, o2
    if perm:
        ax, ay, az = alpha[1], alpha[2], alpha[0]
        sx, sy, sz = sigma[1], sigma[2], sigma[0]
        wx, wy, wz = w[1], w[2], w[0]
    else:
        ax, ay, az = alpha[0], alpha[1], alpha[2]
        sx, sy, sz = sigma[0], sigma[1], sigma[2]
        wx, wy, wz = w[0], w[1], w[2]
    r2 = ax * ax + ay * ay
    k = sx * wy - sy * wx
    hs = ax * sx + ay * sy
    hw = ax * wx + ay * wy
    lam = hs * wz - sz * hw
    o0 = (ay * k + ax * az * lam) / r2
    o1 = (-ax * k + ay * az * lam) / r2
    o2 = -lam
    if perm:
        out[0], out[1], out[2] = o2, o0, o1
    else:
        out[0], out[1], out[2] = o0, o1, o2


cdef inline void collide(double[:, ::1] vel, int64_t i, int64_t j, double un,
                         const double* sig) noexcept nogil:
    cdef int d
    cdef double c, h
    for d in range(3):
        c = 0.5 * (vel[i, d] + vel[j, d])
        h = 0.5 * un * sig[d]
        vel[i, d] = c + h
        vel[j, d] = c - h


def select_pairs(int64_t n, int64_t n_c, uint64_t seed, uint64_t step):
    if 2 * n_c > n:
        raise ValueError("collision count exceeds ensemble")
    cdef int64_t m = 2 * n_c
    out = np.empty((n_c, 2), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef int64_t* perm
    cdef int64_t i, j, span, off, tmp
    cdef double u[2]
    if m == 0:
        return out
    perm = <int64_t*>malloc(n * sizeof(int64_t))
    if perm == NULL:
        raise MemoryError()
    with nogil:
        for i in range(n):
            perm[i] = i
        for i in range(m):
            uniform2(seed, step, <uint64_t>i, TAG_SHUFFLE, u)
            span = n - i
            off = <int64_t>(u[0] * <double>span)
            if off > span - 1:
                off = span - 1
            j = i + off
            tmp = perm[j]
            perm[j] = perm[i]
            perm[i] = tmp
            o[i // 2, i % 2] = tmp
    free(perm)
    return out


def _empty_record(n_c):
    return {
        "outcome": np.zeros(n_c, dtype=np.int8),
        "alpha": np.zeros((n_c, 3)),
        "sigma": np.full((n_c, 3), np.nan),
        "u_norm": np.zeros(n_c),
        "cos_theta": np.full(n_c, np.nan),
        "phi": np.full(n_c, np.nan),
        "q": np.zeros(n_c),
    }


cdef inline int sep_pair(double[:, ::1] vel, int64_t i, int64_t j, Py_ssize_t k,
                         uint64_t seed, uint64_t step, double kappa, double beta,
                         double sigma_v, signed char[::1] outcome, double[:, ::1] alpha,
                         double[:, ::1] sigma, double[::1] u_norm, double[::1] cos_theta,
                         double[::1] phi_out, double[::1] q) noexcept nogil:
    """One separable pair; returns 1 on a bound violation."""
    cdef double u[2]
    cdef double sig[3]
    cdef double ux, uy, uz, un, qv, ct, ph
    cdef int viol = 0
    ux = vel[i, 0] - vel[j, 0]
    uy = vel[i, 1] - vel[j, 1]
    uz = vel[i, 2] - vel[j, 2]
    un = sqrt(ux * ux + uy * uy + uz * uz)
    u_norm[k] = un
    if un < TOL_U:
        return 0
    alpha[k, 0] = ux / un
    alpha[k, 1] = uy / un
    alpha[k, 2] = uz / un
    qv = velocity_part(un, beta)
    q[k] = qv
    if qv > sigma_v:
        viol = 1
    uniform2(seed, step, <uint64_t>k, TAG_ACCEPT, u)
    if not (u[0] <= qv / sigma_v):
        return viol
    outcome[k] = REAL
    uniform2(seed, step, <uint64_t>k, TAG_ANGLES, u)
    if kappa == 0.0:
        ct = 1.0 - 2.0 * u[0]
    else:
        ct = 2.0 * pow(1.0 - u[0], 1.0 / (kappa + 1.0)) - 1.0
    ph = 2.0 * M_PI * u[1]
    sigma_from_cos(&alpha[k, 0], ct, ph, sig)
    sigma[k, 0] = sig[0]
    sigma[k, 1] = sig[1]
    sigma[k, 2] = sig[2]
    cos_theta[k] = ct
    phi_out[k] = ph
    collide(vel, i, j, un, sig)
    return viol


cdef inline int gen_pair(double[:, ::1] vel, int64_t i, int64_t j, Py_ssize_t k,
                         uint64_t seed, uint64_t step, double kappa, double beta,
                         double c_norm, double sigma_total, signed char[::1] outcome,
                         double[:, ::1] alpha, double[:, ::1] sigma, double[::1] u_norm,
                         double[::1] cos_theta, double[::1] q) noexcept nogil:
    """One general-sampler pair; returns 1 on a bound violation."""
    cdef double u[2]
    cdef double sig[3]
    cdef double ux, uy, uz, un, cz, sz, ph, ct, qk
    cdef int viol = 0
    uniform2(seed, step, <uint64_t>k, TAG_ANGLES, u)
    cz = 1.0 - 2.0 * u[0]
    sz = sqrt(max((1.0 - cz) * (1.0 + cz), 0.0))
    ph = 2.0 * M_PI * u[1]
    sig[0] = sz * cos(ph)
    sig[1] = sz * sin(ph)
    sig[2] = cz
    sigma[k, 0] = sig[0]
    sigma[k, 1] = sig[1]
    sigma[k, 2] = sig[2]
    ux = vel[i, 0] - vel[j, 0]
    uy = vel[i, 1] - vel[j, 1]
    uz = vel[i, 2] - vel[j, 2]
    un = sqrt(ux * ux + uy * uy + uz * uz)
    u_norm[k] = un
    if un < TOL_U:
        return 0
    alpha[k, 0] = ux / un
    alpha[k, 1] = uy / un
    alpha[k, 2] = uz / un
    ct = sig[0] * alpha[k, 0] + sig[1] * alpha[k, 1] + sig[2] * alpha[k, 2]
    ct = min(max(ct, -1.0), 1.0)
    cos_theta[k] = ct
    if kappa == 0.0:
        qk = c_norm * 1.0 * velocity_part(un, beta)
    else:
        qk = c_norm * pow(1.0 + ct, kappa) * velocity_part(un, beta)
    q[k] = qk
    if qk > sigma_total:
        viol = 1
    uniform2(seed, step, <uint64_t>k, TAG_ACCEPT, u)
    if u[0] <= qk / sigma_total:
        outcome[k] = REAL
        collide(vel, i, j, un, sig)
    return viol


cdef inline int adj_pair(double[:, :, ::1] gamma, const double[:, ::1] phi_final,
                         int64_t i, int64_t j, Py_ssize_t k, bint real,
                         const double[:, ::1] alpha, const double[:, ::1] sigma, double un,
                         double ct, double qk, double bound, double beta, double kappa,
                         bint sigma_scores, bint use_btilde, double rho_over_n) noexcept nogil:
    """Pull one pair back for every objective; returns 1 when the score guard fired."""
    cdef double score[3]
    cdef double g[3]
    cdef double g1[3]
    cdef double diff[3]
    cdef double extra[3]
    cdef double top[3]
    cdef double bot[3]
    cdef double factor, gap, ratio, proj, scale
    cdef Py_ssize_t o
    cdef int d
    cdef int guard = 0
    score[0] = 0.0
    score[1] = 0.0
    score[2] = 0.0
    if un >= TOL_U:
        for d in range(3):
            score[d] = beta * alpha[k, d] / un
        if sigma_scores and kappa > 0.0:
            if 1.0 + ct > TOL_THETA:
                factor = kappa / ((1.0 + ct) * un)
                for d in range(3):
                    score[d] = score[d] + factor * (sigma[k, d] - ct * alpha[k, d])
            else:
                score[0] = 0.0
                score[1] = 0.0
                score[2] = 0.0
        if not real:
            gap = bound - qk
            if gap <= GUARD_REL * bound:
                guard = 1
                ratio = 0.0
            else:
                ratio = qk / gap
            for d in range(3):
                score[d] = -ratio * score[d]
    for o in range(gamma.shape[0]):
        for d in range(3):
            g[d] = gamma[o, i, d]
            g1[d] = gamma[o, j, d]
            top[d] = g[d]
            bot[d] = g1[d]
        if real:
            proj = 0.5 * (sigma[k, 0] * (g[0] - g1[0]) + sigma[k, 1] * (g[1] - g1[1])
                          + sigma[k, 2] * (g[2] - g1[2]))
            for d in range(3):
                top[d] = 0.5 * (g[d] + g1[d]) + proj * alpha[k, d]
                bot[d] = 0.5 * (g[d] + g1[d]) - proj * alpha[k, d]
            if use_btilde:
                for d in range(3):
                    diff[d] = g1[d] - g[d]
                g_action(&alpha[k, 0], &sigma[k, 0], diff, extra)
                for d in range(3):
                    top[d] = top[d] + 0.5 * extra[d]
                    bot[d] = bot[d] - 0.5 * extra[d]
        scale = rho_over_n * (phi_final[o, i] + phi_final[o, j])
        for d in range(3):
            gamma[o, i, d] = top[d] + scale * score[d]
            gamma[o, j, d] = bot[d] - scale * score[d]
    return guard


def step_separable(double[:, ::1] vel, const int64_t[:, ::1] pairs, uint64_t seed, uint64_t step,
                   double kappa, double beta, double sigma_v, int threads=1):
    cdef Py_ssize_t n_c = pairs.shape[0]
    rec = _empty_record(n_c)
    if n_c == 0:
        return rec, 0
    cdef signed char[::1] outcome = rec["outcome"]
    cdef double[:, ::1] alpha = rec["alpha"]
    cdef double[:, ::1] sigma = rec["sigma"]
    cdef double[::1] u_norm = rec["u_norm"]
    cdef double[::1] cos_theta = rec["cos_theta"]
    cdef double[::1] phi_out = rec["phi"]
    cdef double[::1] q = rec["q"]
    cdef Py_ssize_t k
    cdef long violations = 0
    cdef int nt = max(threads, 1)
    for k in prange(n_c, nogil=True, num_threads=nt, schedule="static"):
        violations += sep_pair(vel, pairs[k, 0], pairs[k, 1], k, seed, step, kappa, beta, sigma_v,
                               outcome, alpha, sigma, u_norm, cos_theta, phi_out, q)
    return rec, int(violations)


def step_general(double[:, ::1] vel, const int64_t[:, ::1] pairs, uint64_t seed, uint64_t step,
                 double kappa, double beta, double c_norm, double sigma_total, int threads=1):
    cdef Py_ssize_t n_c = pairs.shape[0]
    rec = _empty_record(n_c)
    if n_c == 0:
        return rec, 0
    cdef signed char[::1] outcome = rec["outcome"]
    cdef double[:, ::1] alpha = rec["alpha"]
    cdef double[:, ::1] sigma = rec["sigma"]
    cdef double[::1] u_norm = rec["u_norm"]
    cdef double[::1] cos_theta = rec["cos_theta"]
    cdef double[::1] q = rec["q"]
    cdef Py_ssize_t k
    cdef long violations = 0
    cdef int nt = max(threads, 1)
    for k in prange(n_c, nogil=True, num_threads=nt, schedule="static"):
        violations += gen_pair(vel, pairs[k, 0], pairs[k, 1], k, seed, step, kappa, beta, c_norm,
                               sigma_total, outcome, alpha, sigma, u_norm, cos_theta, q)
    return rec, int(violations)


def adjoint_step(double[:, :, ::1] gamma, const double[:, ::1] phi_final,
                 const int64_t[:, ::1] pairs, const signed char[::1] outcome,
                 const double[:, ::1] alpha, const double[:, ::1] sigma,
                 const double[::1] u_norm, const double[::1] cos_theta, const double[::1] q,
                 double bound, double beta, double kappa, bint sigma_scores, bint use_btilde,
                 double rho_over_n, int threads=1):
    cdef Py_ssize_t n_c = pairs.shape[0]
    cdef Py_ssize_t k
    cdef long guards = 0
    cdef int nt = max(threads, 1)
    if n_c == 0:
        return 0
    for k in prange(n_c, nogil=True, num_threads=nt, schedule="static"):
        guards += adj_pair(gamma, phi_final, pairs[k, 0], pairs[k, 1], k, outcome[k] == REAL,
                           alpha, sigma, u_norm[k], cos_theta[k], q[k], bound, beta, kappa,
                           sigma_scores, use_btilde, rho_over_n)
    return int(guards)
