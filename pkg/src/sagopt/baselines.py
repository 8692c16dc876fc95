"""Comparison optimizers: deterministic full-gradient methods, plain and
averaged stochastic gradient, the cyclic incremental method, coordinate
descent on the primal, and dual coordinate ascent.

Each method has a small state class plus a step function; the *Driver
classes at the bottom wrap them behind the common run/x/passes interface the
experiment harness expects.
"""
from math import sqrt

import numpy as np

from . import _backend
from .losses import LOGISTIC, SQUARED
from .samplers import DiscreteSampler, Rng
from .sag import SagState, sag_step

_SKIP_SQ = 1e-8


def _objective_parts(model, ds, x):
    # margins computed once serve both the value and the gradient
    u = ds.matvec(x)
    vals = model.margin_values(u, ds.labels)
    derivs = model.margin_derivs(u, ds.labels)
    value = float(vals.mean()) + 0.5 * model.lam * float(x @ x)
    grad = ds.rmatvec(derivs / ds.n) + model.lam * x
    return value, grad


class FgState:
    """Plain full-gradient descent iterate."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=np.float64)
        self.k = 0
        self.evals = 0


def fg_step(state, model, ds, alpha):
    """x <- x - alpha g'(x)."""
    state.x = state.x - alpha * model.full_gradient(ds, state.x)
    state.k += 1
    state.evals += ds.n
    return state


class AfgState:
    """Accelerated full-gradient state: iterate x, extrapolation point z,
    momentum counter t, and the doubling estimate of L."""

    def __init__(self, x, l0=1.0):
        self.x = np.asarray(x, dtype=np.float64)
        self.z = self.x.copy()
        self.t = 1.0
        self.lhat = float(l0)
        self.k = 0
        self.evals = 0


def afg_step(state, model, ds):
    """One accelerated step with doubling line search on the full objective.

    The gradient step happens at the extrapolation point z; the estimate is
    doubled until g(z - (1/L)g'(z)) <= g(z) - ||g'(z)||^2 / (2L) and is
    never decreased.  The momentum coefficient follows
    t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2.
    """
    n = ds.n
    value, grad = _objective_parts(model, ds, state.z)
    state.evals += n
    sq = float(grad @ grad)
    if sq > _SKIP_SQ:
        while True:
            trial = model.full_objective(ds, state.z - grad / state.lhat)
            state.evals += n
            if trial <= value - sq / (2.0 * state.lhat):
                break
            if state.lhat > 1e300:
                raise RuntimeError("line search failed to terminate")
            state.lhat *= 2.0
    x_new = state.z - grad / state.lhat
    t_new = (1.0 + sqrt(1.0 + 4.0 * state.t * state.t)) / 2.0
    state.z = x_new + ((state.t - 1.0) / t_new) * (x_new - state.x)
    state.x = x_new
    state.t = t_new
    state.k += 1
    return state


class SgState:
    """Stochastic-gradient iterate plus the post-step running sum that backs
    the averaged variant."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=np.float64)
        self.xsum = np.zeros_like(self.x)
        self.k = 0
        self.evals = 0


def sg_step(state, model, ds, i, alpha):
    """x <- x - alpha f_i'(x), with the ridge term applied multiplicatively."""
    u = ds.row_dot(i, state.x)
    _, deriv = model.point_loss_deriv(u, ds.labels[i])
    cols, vals = ds.row(i)
    if model.lam != 0.0:
        state.x *= 1.0 - alpha * model.lam
    state.x[cols] -= (alpha * deriv) * vals
    state.k += 1
    state.evals += 1
    state.xsum += state.x
    return state


def asg_average(state):
    """Mean of the iterates produced so far (the iterate itself before any
    step has been taken)."""
    if state.k == 0:
        return state.x.copy()
    return state.xsum / state.k


class IagState:
    """Cyclic incremental state: the shared average-gradient memory plus a
    fixed visiting order."""

    def __init__(self, inner, order):
        self.inner = inner
        self.order = np.asarray(order, dtype=np.int64)
        self.cursor = 0


def iag_step(state, model, ds, alpha, reweight=False, exact_reg=False):
    """Identical state transition to sag_step; only the index is cyclic."""
    i = int(state.order[state.cursor])
    state.cursor = (state.cursor + 1) % ds.n
    sag_step(state.inner, model, ds, i, alpha, reweight, exact_reg)
    return state


class PcdState:
    """Coordinate-descent state with a residual cache u = Ax.

    Column access, per-coordinate constants L_j = lam + (c/n) sum_i a_ij^2,
    and the weighted coordinate sampler are built once at construction.
    """

    def __init__(self, model, ds, x0=None):
        n, p = ds.n, ds.p
        self.x = np.zeros(p) if x0 is None else np.array(x0, dtype=np.float64)
        self.cache = ds.matvec(self.x)
        order = np.argsort(ds.col_idx, kind="stable")
        rows_of = np.repeat(np.arange(n, dtype=np.int64),
                            np.diff(ds.row_ptr))
        self.row_idx = rows_of[order]
        self.col_values = ds.values[order]
        counts = np.bincount(ds.col_idx, minlength=p).astype(np.int64)
        self.col_ptr = np.concatenate([np.zeros(1, np.int64),
                                       np.cumsum(counts)])
        colsq = np.bincount(ds.col_idx, weights=ds.values ** 2, minlength=p)
        self.col_l = model.lam + (model.curvature_bound() / n) * colsq
        self._sampler = None
        self.k = 0

    def sampler(self):
        if self._sampler is None:
            self._sampler = DiscreteSampler(self.col_l)
        return self._sampler


def pcd_step(state, model, ds, j=None, weighted=False, rng=None):
    """One coordinate update x_j <- x_j - (1/L_j) g_j'(x).

    The partial derivative comes from the cached margins in O(nnz of column
    j); the cache is patched in the same pass.  With j omitted the
    coordinate is drawn uniformly, or proportionally to L_j in weighted
    mode.
    """
    if j is None:
        j = state.sampler().sample(rng) if weighted else rng.next_index(ds.p)
    s, e = state.col_ptr[j], state.col_ptr[j + 1]
    rows = state.row_idx[s:e]
    av = state.col_values[s:e]
    derivs = model.margin_derivs(state.cache[rows], ds.labels[rows])
    gj = model.lam * state.x[j] + float(av @ derivs) / ds.n
    if gj != 0.0:
        delta = -gj / state.col_l[j]
        state.x[j] += delta
        state.cache[rows] += delta * av
    state.k += 1
    return state


class DcaState:
    """Dual coordinate ascent state.

    One dual variable per example; the primal is maintained through
    x = (1/(lam n)) sum_i alpha_i a_i, so each dual update patches x on the
    support of the selected row.
    """

    def __init__(self, model, ds):
        if model.lam <= 0.0:
            raise ValueError("the dual needs lam > 0")
        if model.family == LOGISTIC and np.any(np.abs(ds.labels) != 1.0):
            raise ValueError("the logistic dual assumes labels in {-1, +1}")
        self.dual = np.zeros(ds.n)
        self.x = np.zeros(ds.p)
        self.k = 0


def _logistic_dual_root(b, u_base, coef, a_old):
    """Solve b log(s/(1-s)) + u_base + (s b - a_old) coef = 0 for s in (0,1).

    The left side is strictly monotone in s (increasing for b=+1,
    decreasing for b=-1), so a safeguarded Newton iteration with a bisection
    bracket converges; tolerance 1e-12 on the residual.
    """
    def h(s):
        return b * np.log(s / (1.0 - s)) + u_base + (s * b - a_old) * coef

    lo, hi = 1e-300, 1.0 - 1e-16
    hlo, hhi = h(lo), h(hi)
    if hlo == 0.0:
        return lo
    if hhi == 0.0:
        return hi
    if (hlo < 0.0) == (hhi < 0.0):
        # root pressed against a representable boundary
        return lo if abs(hlo) < abs(hhi) else hi
    if hlo > 0.0:
        lo, hi = hi, lo  # keep h(lo) < 0 < h(hi)
    s = 1.0 / (1.0 + np.exp(b * u_base))
    s = min(max(s, 1e-300), 1.0 - 1e-16)
    for _ in range(200):
        val = h(s)
        if abs(val) <= 1e-12:
            return s
        if val < 0.0:
            lo = s
        else:
            hi = s
        slope = b / (s * (1.0 - s)) + b * coef
        if slope != 0.0:
            s_new = s - val / slope
            if not min(lo, hi) < s_new < max(lo, hi):
                s_new = 0.5 * (lo + hi)
        else:
            s_new = 0.5 * (lo + hi)
        if s_new == s:
            return s
        s = s_new
    return s


def dca_step(state, model, ds, i=None, rng=None):
    """Exactly maximize the dual over one coordinate.

    Squared loss has the closed form alpha = (b - u + q alpha_old)/(1 + q)
    with q = ||a_i||^2/(lam n); logistic reduces to a monotone scalar root
    found by safeguarded Newton.  The primal link is patched in O(nnz(a_i)).
    """
    n = ds.n
    if i is None:
        i = rng.next_index(n)
    lam = model.lam
    b = ds.labels[i]
    a_old = state.dual[i]
    u = ds.row_dot(i, state.x)
    sqn = float(ds.sqnorms()[i])
    scale = 1.0 / (lam * n)
    if model.family == SQUARED:
        q = sqn * scale
        a_new = (b - u + q * a_old) / (1.0 + q)
    else:
        if sqn == 0.0:
            # zero row: the quadratic part vanishes, optimum at s = sigma(-bu)
            s = 1.0 / (1.0 + np.exp(b * u))
            a_new = s * b
        else:
            s = _logistic_dual_root(b, u, sqn * scale, a_old)
            a_new = s * b
    delta = a_new - a_old
    if delta != 0.0:
        state.dual[i] = a_new
        cols, vals = ds.row(i)
        state.x[cols] += (delta * scale) * vals
    state.k += 1
    return state


def dual_objective(state, model, ds):
    """D(alpha) = (1/n) sum_i (-phi_i*(-alpha_i)) - (lam/2)||x(alpha)||^2."""
    al = state.dual
    if model.family == SQUARED:
        terms = -0.5 * al * al + al * ds.labels
    else:
        s = al * ds.labels
        if np.any((s < 0.0) | (s > 1.0)):
            raise ValueError("logistic dual variable outside [0, 1]")
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(s > 0.0, s * np.log(s), 0.0) \
                + np.where(s < 1.0, (1.0 - s) * np.log(1.0 - s), 0.0)
        terms = -ent
    x = state.x
    return float(terms.mean()) - 0.5 * model.lam * float(x @ x)


# -- harness drivers -------------------------------------------------------

class FgDriver:
    """Full-gradient descent with a constant step size."""

    iters_per_pass = 1.0

    def __init__(self, model, ds, alpha, x0=None):
        self.model = model
        self.ds = ds
        self.alpha = float(alpha)
        self.state = FgState(np.zeros(ds.p) if x0 is None else x0)

    def run(self, steps):
        for _ in range(int(steps)):
            fg_step(self.state, self.model, self.ds, self.alpha)
        return self

    @property
    def x(self):
        return self.state.x.copy()

    @property
    def passes(self):
        return self.state.evals / self.ds.n


class AfgDriver:
    """Accelerated full gradient with the doubling estimate of L."""

    iters_per_pass = 1.0

    def __init__(self, model, ds, l0=1.0, x0=None):
        self.model = model
        self.ds = ds
        self.state = AfgState(np.zeros(ds.p) if x0 is None else x0, l0=l0)

    def run(self, steps):
        for _ in range(int(steps)):
            afg_step(self.state, self.model, self.ds)
        return self

    @property
    def x(self):
        return self.state.x.copy()

    @property
    def passes(self):
        return self.state.evals / self.ds.n


class SgDriver:
    """Constant-step stochastic gradient, kernel-backed; with ``average``
    the reported iterate is the post-step running mean."""

    def __init__(self, model, ds, alpha, seed=0, average=False):
        self.model = model
        self.ds = ds
        self.alpha = float(alpha)
        self.average = bool(average)
        self.iters_per_pass = float(ds.n)
        self._x = np.zeros(ds.p)
        self._xsum = np.zeros(ds.p if average else 0)
        self._counters = np.zeros(4, dtype=np.int64)
        self._rng_state = np.array([Rng(seed).state], dtype=np.uint64)
        self._loss_code = 0 if model.family == SQUARED else 1

    def run(self, steps):
        ds = self.ds
        _backend.sg_chunk(ds.row_ptr, ds.col_idx, ds.values, ds.labels,
                          self._loss_code, self.model.lam, self._x,
                          self._counters, self._rng_state, int(steps),
                          self.alpha, self._xsum, int(self.average))
        return self

    @property
    def x(self):
        if self.average and self._counters[1] > 0:
            return self._xsum / int(self._counters[1])
        return self._x.copy()

    @property
    def passes(self):
        return int(self._counters[2]) / self.ds.n


class PcdDriver:
    """Randomized primal coordinate descent; ``weighted`` samples
    coordinates proportionally to their constants L_j.

    One coordinate iteration is charged n/p gradient-evaluation
    equivalents, so one effective pass is p iterations at a dense cost of
    O(np), matching the full-gradient unit.  Sparse columns would justify a
    cheaper charge; the comparison deliberately ignores that.
    """

    def __init__(self, model, ds, weighted=False, seed=0):
        self.model = model
        self.ds = ds
        self.weighted = bool(weighted)
        self.state = PcdState(model, ds)
        self.rng = Rng(seed)
        self.iters_per_pass = float(ds.p)

    def run(self, steps):
        for _ in range(int(steps)):
            pcd_step(self.state, self.model, self.ds,
                     weighted=self.weighted, rng=self.rng)
        return self

    @property
    def x(self):
        return self.state.x.copy()

    @property
    def passes(self):
        return self.state.k * (self.ds.n / self.ds.p) / self.ds.n


class DcaDriver:
    """Uniform dual coordinate ascent with exact one-dimensional updates."""

    def __init__(self, model, ds, seed=0):
        self.model = model
        self.ds = ds
        self.state = DcaState(model, ds)
        self.rng = Rng(seed)
        self.iters_per_pass = float(ds.n)

    def run(self, steps):
        for _ in range(int(steps)):
            dca_step(self.state, self.model, self.ds, rng=self.rng)
        return self

    @property
    def x(self):
        return self.state.x.copy()

    @property
    def passes(self):
        return self.state.k / self.ds.n

    @property
    def dual_value(self):
        return dual_objective(self.state, self.model, self.ds)
