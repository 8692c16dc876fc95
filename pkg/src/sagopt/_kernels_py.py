"""Pure-Python optimizer inner loops (fallback lane).

These functions mirror the compiled kernels in ``_kernels.pyx`` exactly:
same signatures, same update order, same random streams.  Integer draw
sequences are bit-identical across the two lanes; floating trajectories may
differ at rounding level because numpy's dot products use pairwise summation
while the C loops accumulate left to right.

All state lives in caller-owned numpy arrays:
  counters: int64[4] = [m, k, evals, unused]  (m: examples seen, k: iterations,
            evals: loss evaluations including line-search probes)
  rng_state: uint64[1] splitmix64 state (see samplers.Rng)
  ls_box: float64[2] = [current loss-Lipschitz estimate, per-iteration decay]
"""
from math import exp, log1p

import numpy as np

BACKEND = "python"

_MASK = (1 << 64) - 1
_SKIP_SQ = 1e-8  # line-search test skipped below this squared gradient norm


def _next_u64(s):
    s = (s + 0x9E3779B97F4A7C15) & _MASK
    z = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return s, z ^ (z >> 31)


def _lval(code, u, b):
    if code == 0:
        r = u - b
        return 0.5 * r * r
    t = u * b
    if t >= 0.0:
        return log1p(exp(-t))
    return -t + log1p(exp(t))


def _lderiv(code, u, b):
    if code == 0:
        return u - b
    t = u * b
    if t > 0.0:
        e = exp(-t)
        return -b * (e / (1.0 + e))
    return -b / (1.0 + exp(t))


def _fenwick_pick(tree, n, top_bit, target):
    pos = 0
    bit = top_bit
    while bit > 0:
        nxt = pos + bit
        if nxt <= n and tree[nxt] <= target:
            target -= tree[nxt]
            pos = nxt
        bit >>= 1
    return pos if pos < n else n - 1


def _fenwick_add(tree, n, i, delta):
    j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & -j


def _scalar_line_search(code, u, b, value, deriv, sqnorm, lhat, counters):
    """Double lhat until the descent test on the scalar loss holds.

    The candidate step x' = x - (1/lhat) l' a_i moves the margin to
    u' = u - (||a_i||^2 l') / lhat, so the whole test runs on scalars:
    l(u') <= l(u) - ||a_i||^2 l'^2 / (2 lhat).  Each probe counts as one
    evaluation.
    """
    if not np.isfinite(value):
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


def sag_scalar_chunk(row_ptr, col_idx, values, labels, sqnorms,
                     loss_code, lam,
                     x, y, d, visited, counters, rng_state, steps,
                     alpha_mode, alpha_value, ls_box,
                     reweight, exact_reg,
                     index_mode, order, cursor,
                     ftree, ftotal, ftop_bit,
                     xsum, track_xsum):
    """Scalar-memory SAG family: uniform / cyclic / fixed-weight index choice,
    constant or line-search steps, optional re-weighting and exact
    regularization.  One iteration costs O(nnz(a_i) + p).
    """
    n = len(labels)
    p = len(x)
    s = int(rng_state[0])
    m = int(counters[0])
    for _ in range(steps):
        if track_xsum:
            xsum += x
        if index_mode == 0:
            s, z = _next_u64(s)
            i = int((z >> 11) * 2.0 ** -53 * n)
            if i >= n:
                i = n - 1
        elif index_mode == 1:
            i = int(order[cursor[0]])
            cursor[0] = (cursor[0] + 1) % n
        else:
            s, z = _next_u64(s)
            target = (z >> 11) * 2.0 ** -53 * ftotal[0]
            if target >= ftotal[0]:
                target = np.nextafter(ftotal[0], 0.0)
            i = _fenwick_pick(ftree, n, ftop_bit, target)
        if not visited[i]:
            visited[i] = 1
            m += 1

        lo, hi = row_ptr[i], row_ptr[i + 1]
        cols = col_idx[lo:hi]
        vals = values[lo:hi]
        u = float(vals @ x[cols])
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
        d[cols] += vals * delta

        divisor = m if reweight else n
        step = alpha / divisor
        if exact_reg and lam != 0.0:
            x *= 1.0 - alpha * lam
        x -= step * d
        counters[1] += 1
    counters[0] = m
    rng_state[0] = s


def sag_dense_chunk(row_ptr, col_idx, values, labels,
                    loss_code, lam,
                    x, Y, d, visited, counters, rng_state, steps,
                    alpha, reweight,
                    index_mode, order, cursor,
                    xsum, track_xsum):
    """Generic-memory SAG: stores the full per-example gradient vector
    f_i'(x) = lam x + l' a_i, so the plain recursion is exact for lam > 0
    without the exact-regularization rewrite.  O(p) per iteration.
    """
    n = len(labels)
    s = int(rng_state[0])
    m = int(counters[0])
    for _ in range(steps):
        if track_xsum:
            xsum += x
        if index_mode == 0:
            s, z = _next_u64(s)
            i = int((z >> 11) * 2.0 ** -53 * n)
            if i >= n:
                i = n - 1
        else:
            i = int(order[cursor[0]])
            cursor[0] = (cursor[0] + 1) % n
        if not visited[i]:
            visited[i] = 1
            m += 1

        lo, hi = row_ptr[i], row_ptr[i + 1]
        cols = col_idx[lo:hi]
        vals = values[lo:hi]
        u = float(vals @ x[cols])
        deriv = _lderiv(loss_code, u, labels[i])
        counters[2] += 1

        gnew = lam * x
        gnew[cols] += deriv * vals
        d += gnew - Y[i]
        Y[i] = gnew

        divisor = m if reweight else n
        x -= (alpha / divisor) * d
        counters[1] += 1
    counters[0] = m
    rng_state[0] = s


def sag_jit_chunk(row_ptr, col_idx, values, labels, sqnorms,
                  loss_code, lam,
                  z_arr, kappa_box,
                  y, d, visited, counters, rng_state, steps,
                  alpha_mode, alpha_value, ls_box,
                  S_buf, V, k_box, reweight):
    """Sparse lane: x is represented as kappa * z with per-coordinate lazy
    catch-up, so one iteration costs O(nnz(a_i)).  S_buf[t+1] holds the
    cumulative step sum after iteration t (S_buf[0] = 0); V[j] is the
    iteration at which coordinate j was last materialized.
    """
    n = len(labels)
    p = len(z_arr)
    s = int(rng_state[0])
    m = int(counters[0])
    k = int(k_box[0])
    kappa = float(kappa_box[0])
    for _ in range(steps):
        s, zdraw = _next_u64(s)
        i = int((zdraw >> 11) * 2.0 ** -53 * n)
        if i >= n:
            i = n - 1
        if not visited[i]:
            visited[i] = 1
            m += 1

        lo, hi = row_ptr[i], row_ptr[i + 1]
        cols = col_idx[lo:hi]
        vals = values[lo:hi]
        # bring the touched coordinates current before reading them
        z_arr[cols] -= (S_buf[k] - S_buf[V[cols]]) * d[cols]
        V[cols] = k
        u = kappa * float(vals @ z_arr[cols])
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
        d[cols] += vals * delta

        kappa *= 1.0 - alpha * lam
        divisor = m if reweight else n
        S_buf[k + 1] = S_buf[k] + alpha / (kappa * divisor)
        k += 1
        counters[1] += 1

        if not 2.0 ** -50 <= abs(kappa) <= 2.0 ** 50:
            z_arr -= (S_buf[k] - S_buf[V]) * d
            V[:] = k
            z_arr *= kappa
            kappa = 1.0
            # all V[j] == k now, so older entries are dead; rebase to keep
            # future increments above the ulp of the running sum
            S_buf[k] = 0.0
    counters[0] = m
    rng_state[0] = s
    k_box[0] = k
    kappa_box[0] = kappa


def sag_adaptive_chunk(row_ptr, col_idx, values, labels, sqnorms,
                       loss_code, lam,
                       x, y, d, visited, counters, rng_state, steps,
                       reweight, exact_reg,
                       Li, Lglob_box,
                       ftree, fweights, ftotal, ftop_bit,
                       seen_list, unseen_list, slot_of, sumL_box):
    """Adaptive Lipschitz sampling: pick an unseen example with probability
    (n-m)/n, otherwise a seen one with P(i) proportional to L_i + L_mean,
    realized exactly as a half/half mixture of L_i-weighted and uniform
    draws over the seen set.  Per-example estimates are halved on selection
    and doubled until the descent test passes; the global estimate follows
    the ordinary line-search schedule.  The memory update itself is the
    plain SAG one (uniform weights).
    """
    n = len(labels)
    s = int(rng_state[0])
    m = int(counters[0])
    for _ in range(steps):
        s, z = _next_u64(s)
        u1 = (z >> 11) * 2.0 ** -53
        if u1 < (n - m) / n:
            s, z = _next_u64(s)
            j = int((z >> 11) * 2.0 ** -53 * (n - m))
            if j >= n - m:
                j = n - m - 1
            i = int(unseen_list[j])
        else:
            s, z = _next_u64(s)
            u2 = (z >> 11) * 2.0 ** -53
            if u2 < 0.5:
                s, z = _next_u64(s)
                j = int((z >> 11) * 2.0 ** -53 * m)
                if j >= m:
                    j = m - 1
                i = int(seen_list[j])
            else:
                s, z = _next_u64(s)
                target = (z >> 11) * 2.0 ** -53 * ftotal[0]
                if target >= ftotal[0]:
                    target = np.nextafter(ftotal[0], 0.0)
                i = _fenwick_pick(ftree, n, ftop_bit, target)

        first = not visited[i]
        if first:
            visited[i] = 1
            m += 1
            seen_list[m - 1] = i
            last = n - m
            last_id = int(unseen_list[last])
            pos_i = int(slot_of[i])
            unseen_list[pos_i] = last_id
            slot_of[last_id] = pos_i

        lo, hi = row_ptr[i], row_ptr[i + 1]
        cols = col_idx[lo:hi]
        vals = values[lo:hi]
        u = float(vals @ x[cols])
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
        d[cols] += vals * delta

        lmean = sumL_box[0] / m
        alpha_max = 1.0 / (lglob + lam)
        alpha_mean = 0.5 / (lglob + lam) + 0.5 / (lmean + lam)
        alpha = ((n - m) / n) * alpha_max + (m / n) * alpha_mean

        divisor = m if reweight else n
        step = alpha / divisor
        if exact_reg and lam != 0.0:
            x *= 1.0 - alpha * lam
        x -= step * d
        counters[1] += 1
    counters[0] = m
    rng_state[0] = s


def sg_chunk(row_ptr, col_idx, values, labels,
             loss_code, lam,
             x, counters, rng_state, steps, alpha,
             xsum, track_xsum):
    """Plain stochastic gradient; xsum accumulates post-step iterates for the
    averaged variant."""
    n = len(labels)
    s = int(rng_state[0])
    for _ in range(steps):
        s, z = _next_u64(s)
        i = int((z >> 11) * 2.0 ** -53 * n)
        if i >= n:
            i = n - 1
        lo, hi = row_ptr[i], row_ptr[i + 1]
        cols = col_idx[lo:hi]
        vals = values[lo:hi]
        u = float(vals @ x[cols])
        deriv = _lderiv(loss_code, u, labels[i])
        counters[2] += 1
        if lam != 0.0:
            x *= 1.0 - alpha * lam
        x[cols] -= (alpha * deriv) * vals
        counters[1] += 1
        if track_xsum:
            xsum += x
    rng_state[0] = s
