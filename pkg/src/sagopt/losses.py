"""Finite-sum objectives: g(x) = (lam/2)||x||^2 + (1/n) sum_i l(a_i.x, b_i).

Two loss families, both linearly parameterized (the per-example gradient is a
scalar times the feature row, plus the regularizer term):

    logistic:  l(u, b) = log(1 + exp(-b u)),  l'(u, b) = -b / (1 + exp(b u))
    squared:   l(u, b) = (u - b)^2 / 2,       l'(u, b) = u - b

The logistic branch is evaluated through log1p on the negative-exponent side
so values stay finite for |u| well beyond 1e3.
"""
import numpy as np

LOGISTIC = "logistic"
SQUARED = "squared"


class LossModel:
    """Loss family plus l2 regularization strength."""

    def __init__(self, family, lam=0.0):
        if family not in (LOGISTIC, SQUARED):
            raise ValueError("unknown loss family %r" % (family,))
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.family = family
        self.lam = float(lam)

    @property
    def mu_lower(self):
        """Certified strong-convexity lower bound: the regularizer's lambda."""
        return self.lam

    def curvature_bound(self):
        """Upper bound on l'' (uniform in u): 1/4 for logistic, 1 for squared."""
        return 0.25 if self.family == LOGISTIC else 1.0

    # -- scalar loss pieces (vectorized over u, b) -------------------------

    def margin_values(self, u, b):
        u = np.asarray(u, dtype=np.float64)
        if self.family == SQUARED:
            r = u - b
            return 0.5 * r * r
        t = u * b
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = np.log1p(np.exp(-t[pos]))
        out[~pos] = -t[~pos] + np.log1p(np.exp(t[~pos]))
        return out

    def margin_derivs(self, u, b):
        u = np.asarray(u, dtype=np.float64)
        if self.family == SQUARED:
            return u - b
        t = u * b
        s = np.empty_like(t)
        pos = t > 0
        e = np.exp(-t[pos])
        s[pos] = e / (1.0 + e)
        s[~pos] = 1.0 / (1.0 + np.exp(t[~pos]))
        return np.asarray(-b * s)

    def point_loss_deriv(self, u, b):
        """(l(u, b), l'(u, b)) for one margin value."""
        value = float(self.margin_values(np.array([u]), np.array([b]))[0])
        deriv = float(self.margin_derivs(np.array([u]), np.array([b]))[0])
        return value, deriv

    # -- full-problem quantities ------------------------------------------

    def full_objective(self, ds, x):
        x = np.asarray(x, dtype=np.float64)
        if len(x) != ds.p:
            raise ValueError("x has length %d, dataset has p=%d" % (len(x), ds.p))
        u = ds.matvec(x)
        loss = self.margin_values(u, ds.labels).mean() if ds.n else 0.0
        return float(loss + 0.5 * self.lam * (x @ x))

    def full_gradient(self, ds, x):
        x = np.asarray(x, dtype=np.float64)
        if len(x) != ds.p:
            raise ValueError("x has length %d, dataset has p=%d" % (len(x), ds.p))
        if ds.n == 0:
            return self.lam * x
        u = ds.matvec(x)
        s = self.margin_derivs(u, ds.labels) / ds.n
        return ds.rmatvec(s) + self.lam * x

    def example_value(self, ds, i, x):
        """f_i(x) = (lam/2)||x||^2 + l(a_i.x, b_i)."""
        u = ds.row_dot(i, x)
        v, _ = self.point_loss_deriv(u, ds.labels[i])
        return v + 0.5 * self.lam * float(x @ x)

    def example_gradient(self, ds, i, x):
        """f_i'(x) = lam x + l'(a_i.x, b_i) a_i, as a dense vector."""
        u = ds.row_dot(i, x)
        _, dv = self.point_loss_deriv(u, ds.labels[i])
        g = self.lam * np.asarray(x, dtype=np.float64).copy()
        cols, vals = ds.row(i)
        g[cols] += dv * vals
        return g


class LipschitzInfo:
    """Per-example gradient Lipschitz constants and their aggregates."""

    def __init__(self, per_example, mu_lower):
        self.per_example = np.asarray(per_example, dtype=np.float64)
        self.l_max = float(self.per_example.max())
        self.l_mean = float(self.per_example.mean())
        self.mu_lower = float(mu_lower)


def lipschitz_constants(model, ds):
    """L_i = curvature_bound * ||a_i||^2 + lam for every example."""
    if ds.n == 0:
        raise ValueError("empty dataset has no Lipschitz constants")
    per = model.curvature_bound() * ds.sqnorms() + model.lam
    return LipschitzInfo(per, model.mu_lower)


def batch_hessian_lipschitz(model, ds, batch, tol=1e-10, max_iter=50000):
    """Top eigenvalue of lam I + (c/|B|) sum_{i in B} a_i a_i^T by power iteration.

    c is the loss curvature bound, so for squared loss this is the exact batch
    Hessian; for logistic it is the uniform bound on it.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if len(batch) == 0:
        raise ValueError("empty batch")
    c = model.curvature_bound() / len(batch)
    rows = [ds.row(i) for i in batch]

    def apply(v):
        out = model.lam * v
        for cols, vals in rows:
            out[cols] += (c * (vals @ v[cols])) * vals
        return out

    # deterministic start; any vector not orthogonal to the top eigenvector works
    from .samplers import Rng
    from .data import _normal_pairs
    v = _normal_pairs(Rng(0x5EED), ds.p)
    nrm = np.sqrt(v @ v)
    v /= nrm
    lam_est = 0.0
    for _ in range(max_iter):
        w = apply(v)
        nrm = np.sqrt(w @ w)
        if nrm == 0.0:
            return 0.0
        new_est = float(v @ w)  # Rayleigh quotient, never exceeds the top eigenvalue
        v = w / nrm
        if abs(new_est - lam_est) <= tol * max(1.0, abs(new_est)):
            return new_est
        lam_est = new_est
    return lam_est


def gradient_variance_at(model, ds, x):
    """(1/n) sum_i ||f_i'(x)||^2; meaningful at a high-precision minimizer."""
    x = np.asarray(x, dtype=np.float64)
    if ds.n == 0:
        return 0.0
    u = ds.matvec(x)
    s = model.margin_derivs(u, ds.labels)
    lam = model.lam
    xx = float(x @ x)
    return float(lam * lam * xx + 2.0 * lam * np.mean(s * u) + np.mean(s * s * ds.sqnorms()))
