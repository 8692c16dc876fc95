# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled optimizer inner loops.

Mirrors ``_kernels_py.py`` function for function: same signatures, same update
order, same splitmix64 random streams.  Integer draws are bit-identical to the
pure lane; floating trajectories agree to rounding (dot products here
accumulate left to right).
"""
from libc.math cimport exp, log1p, fabs, nextafter, isfinite
from libc.stdint cimport uint64_t, int64_t, uint8_t

import numpy as np

BACKEND = "compiled"

cdef double _INV53 = 1.0 / 9007199254740992.0
cdef double _SKIP_SQ = 1e-8
cdef double _KAPPA_LO = 2.0 ** -50
cdef double _KAPPA_HI = 2.0 ** 50


cdef inline uint64_t _next_u64(uint64_t *s) nogil:
    cdef uint64_t z
    s[0] = s[0] + <uint64_t>0x9E3779B97F4A7C15
    z = s[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline int64_t _draw_index(uint64_t *s, int64_t n) nogil:
    cdef int64_t i = <int64_t>(((_next_u64(s) >> 11) * _INV53) * n)
    return i if i < n else n - 1


cdef inline double _lval(int code, double u, double b) nogil:
    cdef double r, t
    if code == 0:
        r = u - b
        return 0.5 * r * r
    t = u * b
    if t >= 0.0:
        return log1p(exp(-t))
    return -t + log1p(exp(t))


cdef inline double _lderiv(int code, double u, double b) nogil:
    cdef double t, e
    if code == 0:
        return u - b
    t = u * b
    if t > 0.0:
        e = exp(-t)
        return -b * (e / (1.0 + e))
    return -b / (1.0 + exp(t))


cdef inline int64_t _fenwick_pick(double[::1] tree, int64_t n, int64_t top_bit,
                                  double target) nogil:
    cdef int64_t pos = 0, bit = top_bit, nxt
    while bit > 0:
        nxt = pos + bit
        if nxt <= n and tree[nxt] <= target:
            target -= tree[nxt]
            pos = nxt
        bit >>= 1
    return pos if pos < n else n - 1


cdef inline void _fenwick_add(double[::1] tree, int64_t n, int64_t i,
                              double delta) nogil:
    cdef int64_t j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & (-j)


cdef double _scalar_line_search(int code, double u, double b, double value,
                                double deriv, double sqnorm, double lhat,
                                int64_t[::1] counters) except -1.0:
    cdef double sq, move, trial
    if not isfinite(value):
        raise RuntimeError("non-finite loss value in line search")
    sq = sqnorm * deriv * deriv
    move = sqnorm * deriv
    while True:
        trial = _lval(code, u - move / lhat, b)
        counters[2] += 1
        if trial <= value - sq / (2.0 * lhat):
            return lhat
        if lhat > 1e300:
            raise RuntimeError("line search failed to terminate")
        lhat *= 2.0


def sag_scalar_chunk(int64_t[::1] row_ptr, int64_t[::1] col_idx,
                     double[::1] values, double[::1] labels, double[::1] sqnorms,
                     int loss_code, double lam,
                     double[::1] x, double[::1] y, double[::1] d,
                     uint8_t[::1] visited, int64_t[::1] counters,
                     uint64_t[::1] rng_state, long steps,
                     int alpha_mode, double alpha_value, double[::1] ls_box,
                     int reweight, int exact_reg,
                     int index_mode, int64_t[::1] order, int64_t[::1] cursor,
                     double[::1] ftree, double[::1] ftotal, int64_t ftop_bit,
                     double[::1] xsum, int track_xsum):
    cdef int64_t n = labels.shape[0]
    cdef int64_t p = x.shape[0]
    cdef uint64_t s = rng_state[0]
    cdef int64_t m = counters[0]
    cdef int64_t i, j, t, lo, hi, divisor
    cdef long it
    cdef double u, b, deriv, value, lhat, alpha, sq, delta, step, scale, target

    for it in range(steps):
        if track_xsum:
            for j in range(p):
                xsum[j] += x[j]
        if index_mode == 0:
            i = _draw_index(&s, n)
        elif index_mode == 1:
            i = order[cursor[0]]
            cursor[0] = (cursor[0] + 1) % n
        else:
            target = ((_next_u64(&s) >> 11) * _INV53) * ftotal[0]
            if target >= ftotal[0]:
                target = nextafter(ftotal[0], 0.0)
            i = _fenwick_pick(ftree, n, ftop_bit, target)
        if visited[i] == 0:
            visited[i] = 1
            m += 1

        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        u = 0.0
        for t in range(lo, hi):
            u += values[t] * x[col_idx[t]]
        b = labels[i]
        deriv = _lderiv(loss_code, u, b)
        counters[2] += 1

        if alpha_mode == 1:
            lhat = ls_box[0] * ls_box[1]
            sq = sqnorms[i] * deriv * deriv
            if sq > _SKIP_SQ:
                value = _lval(loss_code, u, b)
                lhat = _scalar_line_search(loss_code, u, b, value, deriv,
                                           sqnorms[i], lhat, counters)
            ls_box[0] = lhat
            alpha = 1.0 / (lhat + lam)
        else:
            alpha = alpha_value

        delta = deriv - y[i]
        y[i] = deriv
        for t in range(lo, hi):
            d[col_idx[t]] += values[t] * delta

        divisor = m if reweight else n
        step = alpha / divisor
        if exact_reg and lam != 0.0:
            scale = 1.0 - alpha * lam
            for j in range(p):
                x[j] = x[j] * scale - step * d[j]
        else:
            for j in range(p):
                x[j] = x[j] - step * d[j]
        counters[1] += 1
    counters[0] = m
    rng_state[0] = s


def sag_dense_chunk(int64_t[::1] row_ptr, int64_t[::1] col_idx,
                    double[::1] values, double[::1] labels,
                    int loss_code, double lam,
                    double[::1] x, double[:, ::1] Y, double[::1] d,
                    uint8_t[::1] visited, int64_t[::1] counters,
                    uint64_t[::1] rng_state, long steps,
                    double alpha, int reweight,
                    int index_mode, int64_t[::1] order, int64_t[::1] cursor,
                    double[::1] xsum, int track_xsum):
    cdef int64_t n = labels.shape[0]
    cdef int64_t p = x.shape[0]
    cdef uint64_t s = rng_state[0]
    cdef int64_t m = counters[0]
    cdef int64_t i, j, t, lo, hi, divisor
    cdef long it
    cdef double u, deriv, gnew, step

    for it in range(steps):
        if track_xsum:
            for j in range(p):
                xsum[j] += x[j]
        if index_mode == 0:
            i = _draw_index(&s, n)
        else:
            i = order[cursor[0]]
            cursor[0] = (cursor[0] + 1) % n
        if visited[i] == 0:
            visited[i] = 1
            m += 1

        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        u = 0.0
        for t in range(lo, hi):
            u += values[t] * x[col_idx[t]]
        deriv = _lderiv(loss_code, u, labels[i])
        counters[2] += 1

        for j in range(p):
            gnew = lam * x[j]
            d[j] += gnew - Y[i, j]
            Y[i, j] = gnew
        for t in range(lo, hi):
            j = col_idx[t]
            gnew = deriv * values[t]
            d[j] += gnew
            Y[i, j] += gnew

        divisor = m if reweight else n
        step = alpha / divisor
        for j in range(p):
            x[j] = x[j] - step * d[j]
        counters[1] += 1
    counters[0] = m
    rng_state[0] = s


def sag_jit_chunk(int64_t[::1] row_ptr, int64_t[::1] col_idx,
                  double[::1] values, double[::1] labels, double[::1] sqnorms,
                  int loss_code, double lam,
                  double[::1] z_arr, double[::1] kappa_box,
                  double[::1] y, double[::1] d,
                  uint8_t[::1] visited, int64_t[::1] counters,
                  uint64_t[::1] rng_state, long steps,
                  int alpha_mode, double alpha_value, double[::1] ls_box,
                  double[::1] S_buf, int64_t[::1] V, int64_t[::1] k_box,
                  int reweight):
    cdef int64_t n = labels.shape[0]
    cdef int64_t p = z_arr.shape[0]
    cdef uint64_t s = rng_state[0]
    cdef int64_t m = counters[0]
    cdef int64_t k = k_box[0]
    cdef double kappa = kappa_box[0]
    cdef int64_t i, j, t, lo, hi, divisor
    cdef long it
    cdef double u, b, deriv, value, lhat, alpha, sq, delta

    for it in range(steps):
        i = _draw_index(&s, n)
        if visited[i] == 0:
            visited[i] = 1
            m += 1

        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        for t in range(lo, hi):
            j = col_idx[t]
            z_arr[j] -= (S_buf[k] - S_buf[V[j]]) * d[j]
            V[j] = k
        u = 0.0
        for t in range(lo, hi):
            u += values[t] * z_arr[col_idx[t]]
        u *= kappa
        b = labels[i]
        deriv = _lderiv(loss_code, u, b)
        counters[2] += 1

        if alpha_mode == 1:
            lhat = ls_box[0] * ls_box[1]
            sq = sqnorms[i] * deriv * deriv
            if sq > _SKIP_SQ:
                value = _lval(loss_code, u, b)
                lhat = _scalar_line_search(loss_code, u, b, value, deriv,
                                           sqnorms[i], lhat, counters)
            ls_box[0] = lhat
            alpha = 1.0 / (lhat + lam)
        else:
            alpha = alpha_value

        delta = deriv - y[i]
        y[i] = deriv
        for t in range(lo, hi):
            d[col_idx[t]] += values[t] * delta

        kappa *= 1.0 - alpha * lam
        divisor = m if reweight else n
        S_buf[k + 1] = S_buf[k] + alpha / (kappa * divisor)
        k += 1
        counters[1] += 1

        if not (_KAPPA_LO <= fabs(kappa) <= _KAPPA_HI):
            for j in range(p):
                z_arr[j] -= (S_buf[k] - S_buf[V[j]]) * d[j]
                V[j] = k
                z_arr[j] *= kappa
            kappa = 1.0
            # all V[j] == k now, so older entries are dead; rebase to keep
            # future increments above the ulp of the running sum
            S_buf[k] = 0.0
    counters[0] = m
    rng_state[0] = s
    k_box[0] = k
    kappa_box[0] = kappa


def sag_adaptive_chunk(int64_t[::1] row_ptr, int64_t[::1] col_idx,
                       double[::1] values, double[::1] labels, double[::1] sqnorms,
                       int loss_code, double lam,
                       double[::1] x, double[::1] y, double[::1] d,
                       uint8_t[::1] visited, int64_t[::1] counters,
                       uint64_t[::1] rng_state, long steps,
                       int reweight, int exact_reg,
                       double[::1] Li, double[::1] Lglob_box,
                       double[::1] ftree, double[::1] fweights,
                       double[::1] ftotal, int64_t ftop_bit,
                       int64_t[::1] seen_list, int64_t[::1] unseen_list,
                       int64_t[::1] slot_of, double[::1] sumL_box):
    cdef int64_t n = labels.shape[0]
    cdef int64_t p = x.shape[0]
    cdef uint64_t s = rng_state[0]
    cdef int64_t m = counters[0]
    cdef int64_t i, j, t, lo, hi, divisor, last, last_id, pos_i
    cdef long it
    cdef int first
    cdef double u, b, deriv, value, sq, delta, step, scale, target
    cdef double u1, u2, lglob, lold, lnew, lmean, alpha, alpha_max, alpha_mean

    for it in range(steps):
        u1 = (_next_u64(&s) >> 11) * _INV53
        if u1 < (<double>(n - m)) / n:
            j = _draw_index(&s, n - m)
            i = unseen_list[j]
        else:
            u2 = (_next_u64(&s) >> 11) * _INV53
            if u2 < 0.5:
                j = _draw_index(&s, m)
                i = seen_list[j]
            else:
                target = ((_next_u64(&s) >> 11) * _INV53) * ftotal[0]
                if target >= ftotal[0]:
                    target = nextafter(ftotal[0], 0.0)
                i = _fenwick_pick(ftree, n, ftop_bit, target)

        first = visited[i] == 0
        if first:
            visited[i] = 1
            m += 1
            seen_list[m - 1] = i
            last = n - m
            last_id = unseen_list[last]
            pos_i = slot_of[i]
            unseen_list[pos_i] = last_id
            slot_of[last_id] = pos_i

        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        u = 0.0
        for t in range(lo, hi):
            u += values[t] * x[col_idx[t]]
        b = labels[i]
        deriv = _lderiv(loss_code, u, b)
        counters[2] += 1

        sq = sqnorms[i] * deriv * deriv
        lglob = Lglob_box[0] * Lglob_box[1]
        lold = Li[i]
        lnew = lold
        if sq > _SKIP_SQ:
            value = _lval(loss_code, u, b)
            lglob = _scalar_line_search(loss_code, u, b, value, deriv,
                                        sqnorms[i], lglob, counters)
            lnew = _scalar_line_search(loss_code, u, b, value, deriv,
                                       sqnorms[i], lold * 0.5, counters)
        Lglob_box[0] = lglob
        Li[i] = lnew
        sumL_box[0] += lnew if first else lnew - lold
        _fenwick_add(ftree, n, i, lnew - fweights[i])
        ftotal[0] += lnew - fweights[i]
        fweights[i] = lnew

        delta = deriv - y[i]
        y[i] = deriv
        for t in range(lo, hi):
            d[col_idx[t]] += values[t] * delta

        lmean = sumL_box[0] / m
        alpha_max = 1.0 / (lglob + lam)
        alpha_mean = 0.5 / (lglob + lam) + 0.5 / (lmean + lam)
        alpha = ((<double>(n - m)) / n) * alpha_max + ((<double>m) / n) * alpha_mean

        divisor = m if reweight else n
        step = alpha / divisor
        if exact_reg and lam != 0.0:
            scale = 1.0 - alpha * lam
            for j in range(p):
                x[j] = x[j] * scale - step * d[j]
        else:
            for j in range(p):
                x[j] = x[j] - step * d[j]
        counters[1] += 1
    counters[0] = m
    rng_state[0] = s


def sg_chunk(int64_t[::1] row_ptr, int64_t[::1] col_idx,
             double[::1] values, double[::1] labels,
             int loss_code, double lam,
             double[::1] x, int64_t[::1] counters,
             uint64_t[::1] rng_state, long steps, double alpha,
             double[::1] xsum, int track_xsum):
    cdef int64_t n = labels.shape[0]
    cdef int64_t p = x.shape[0]
    cdef uint64_t s = rng_state[0]
    cdef int64_t i, j, t, lo, hi
    cdef long it
    cdef double u, deriv, scale

    for it in range(steps):
        i = _draw_index(&s, n)
        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        u = 0.0
        for t in range(lo, hi):
            u += values[t] * x[col_idx[t]]
        deriv = _lderiv(loss_code, u, labels[i])
        counters[2] += 1
        if lam != 0.0:
            scale = 1.0 - alpha * lam
            for j in range(p):
                x[j] *= scale
        for t in range(lo, hi):
            x[col_idx[t]] -= (alpha * deriv) * values[t]
        counters[1] += 1
        if track_xsum:
            for j in range(p):
                xsum[j] += x[j]
    rng_state[0] = s
