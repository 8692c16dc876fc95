"""Closed-form convergence-rate arithmetic and the Lyapunov certificate.

Three layers: per-iteration and per-pass rate formulas for the average
gradient method and the first-order methods it is usually compared against;
the non-asymptotic bound constants for zero and centered memory
initialization; and a numeric verification of the feasibility system that
certifies the rate, evaluated on a dense (n, mu/L) grid.
"""
from math import exp, sqrt

import numpy as np

_RESIDUAL_NAMES = (
    "B3_nonneg",
    "B4_nonneg",
    "C2_nonpos",
    "C1_C3_nonpos",
    "quad_nonpos",
    "domination",
    "denom_nonneg",
    "2h_le_gamma",
    "h_nonneg",
)


def _check_rate_inputs(n, mu, big_l):
    if n < 1:
        raise ValueError("n must be at least 1")
    if not big_l > 0.0:
        raise ValueError("L must be positive")
    if not 0.0 <= mu <= big_l:
        raise ValueError("mu must lie in [0, L]")


def sag_rate(n, mu, big_l):
    """Per-iteration contraction factor 1 - min(mu/16L, 1/8n)."""
    _check_rate_inputs(n, mu, big_l)
    return 1.0 - min(mu / (16.0 * big_l), 1.0 / (8.0 * n))


def rate_table(n, mu, big_l):
    """Per-pass rate comparison across six methods.

    The full-gradient entries are squared (two iterations per compared unit
    of work); the averaged-gradient and surrogate entries raise the
    per-iteration factor to the n (n iterations per pass).  Returns ordered
    (key, value) pairs.
    """
    _check_rate_inputs(n, mu, big_l)
    ratio = mu / big_l
    fg = (1.0 - ratio) ** 2
    fg_fast = (1.0 - 2.0 * mu / (big_l + mu)) ** 2
    afg = 1.0 - sqrt(ratio)
    lower = (1.0 - 2.0 * sqrt(mu) / (sqrt(big_l) + sqrt(mu))) ** 2
    miso = (1.0 - mu / (n * (big_l + mu))) ** n
    sag = sag_rate(n, mu, big_l) ** n
    return [
        ("fg", fg),
        ("fg_fast", fg_fast),
        ("afg", afg),
        ("lower_bound", lower),
        ("miso", miso),
        ("sag", sag),
    ]


def least_squares_rates(n, p, lam, eig_max, row_sq_max, col_sq_max,
                        eig_min=0.0, eig_min_gram=0.0):
    """Primal and dual per-pass rates for ridge-penalized least squares.

    Inputs are the data-matrix summaries: largest eigenvalue of the Gram
    matrix A^T A (``eig_max``), its smallest eigenvalue (``eig_min``), the
    smallest eigenvalue of A A^T (``eig_min_gram``), the largest squared row
    norm (``row_sq_max``), and the largest squared column norm
    (``col_sq_max``).  Returns ordered (key, rate, exp_bound) triples where
    every rate is provably at most its exponential bound.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be at least 1")
    if not lam > 0.0:
        raise ValueError("the dual problem needs lam > 0")
    for name, v in (("eig_max", eig_max), ("row_sq_max", row_sq_max),
                    ("col_sq_max", col_sq_max), ("eig_min", eig_min),
                    ("eig_min_gram", eig_min_gram)):
        if v < 0.0:
            raise ValueError("%s must be nonnegative" % name)

    l_g = lam + eig_max / n
    l_g_i = lam + row_sq_max
    l_g_j = lam + col_sq_max / n
    l_d = n + eig_max / lam
    l_d_i = n + row_sq_max / lam
    mu_g = lam + eig_min / n
    mu_d = n + eig_min_gram / lam
    nl = n * lam

    rows = []

    def add(key, rate, bound):
        rows.append((key, rate, bound))

    add("primal_fg", (1.0 - mu_g / l_g) ** 2,
        exp(-2.0 * (nl + eig_min) / (nl + eig_max)))
    add("primal_fg_fast", (1.0 - 2.0 * mu_g / (l_g + mu_g)) ** 2,
        exp(-2.0 * (nl + eig_min) / (nl + (eig_max + eig_min) / 2.0)))
    add("dual_fg", (1.0 - mu_d / l_d) ** 2,
        exp(-2.0 * (nl + eig_min_gram) / (nl + eig_max)))
    add("dual_fg_fast", (1.0 - 2.0 * mu_d / (l_d + mu_d)) ** 2,
        exp(-2.0 * (nl + eig_min_gram) / (nl + (eig_max + eig_min_gram) / 2.0)))
    add("primal_afg", 1.0 - sqrt(mu_g / l_g),
        exp(-sqrt((nl + eig_min) / (nl + eig_max))))
    add("dual_afg", 1.0 - sqrt(mu_d / l_d),
        exp(-sqrt((nl + eig_min_gram) / (nl + eig_max))))
    add("primal_cd", (1.0 - mu_g / (p * l_g_j)) ** p,
        exp(-(nl + eig_min) / (nl + col_sq_max)))
    add("dual_cd", (1.0 - mu_d / (n * l_d_i)) ** n,
        exp(-(nl + eig_min_gram) / (nl + row_sq_max)))
    add("sdca_gap", (1.0 - lam / (nl + row_sq_max)) ** n,
        exp(-nl / (nl + row_sq_max)))
    add("sag", (1.0 - min(mu_g / (16.0 * l_g_i), 1.0 / (8.0 * n))) ** n,
        exp(-min((nl + eig_min) / (lam + row_sq_max), 2.0) / 16.0))
    add("miso", (1.0 - mu_g / (n * (l_g_i + mu_g))) ** n,
        exp(-(nl + eig_min) /
            (2.0 * nl + n * row_sq_max + n * eig_min)))
    return rows


def sag_bound(k, init_mode, g0_gap, dist0_sq, sigma_sq, n, big_l, mu):
    """Non-asymptotic suboptimality bound at iteration k.

    ``init_mode`` is "zero" (memories start at zero; the variance term
    sigma_sq/16L enters the constant) or "centered" (memories start at the
    initial gradients re-centered to mean zero; the variance term drops and
    the objective gap picks up a 3/2 factor).  Returns (bound, c0): the
    geometric bound (1 - min(mu/16L, 1/8n))^k c0 when mu > 0, else the
    averaged-iterate bound 32 n c0 / k.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    _check_rate_inputs(n, mu, big_l)
    for name, v in (("g0_gap", g0_gap), ("dist0_sq", dist0_sq),
                    ("sigma_sq", sigma_sq)):
        if v < 0.0:
            raise ValueError("%s must be nonnegative" % name)
    if init_mode == "zero":
        c0 = g0_gap + (4.0 * big_l / n) * dist0_sq + sigma_sq / (16.0 * big_l)
    elif init_mode == "centered":
        c0 = 1.5 * g0_gap + (4.0 * big_l / n) * dist0_sq
    else:
        raise ValueError("init_mode must be 'zero' or 'centered'")
    if mu > 0.0:
        bound = sag_rate(n, mu, big_l) ** k * c0
    else:
        bound = 32.0 * n * c0 / k
    return bound, c0


class LyapunovConstants:
    """The ten scalar constants of the feasibility system, as exact double
    evaluations of their rational formulas in (n, mu, L)."""

    def __init__(self, n, mu, big_l):
        if n < 2:
            raise ValueError("the certificate assumes n >= 2")
        _check_rate_inputs(n, mu, big_l)
        self.n = int(n)
        self.mu = float(mu)
        self.big_l = float(big_l)
        self.a1 = (1.0 / (32.0 * n * big_l)) * (1.0 - 1.0 / (2.0 * n))
        self.a2 = (1.0 / (16.0 * n * big_l)) * (1.0 - 1.0 / (2.0 * n))
        self.b = -(1.0 / (4.0 * n)) * (1.0 - 1.0 / n)
        self.c = 4.0 * big_l / n
        self.h = 0.5 - 1.0 / n
        self.alpha = 1.0 / (16.0 * big_l)
        self.d = self.alpha / n
        self.delta = min(1.0 / (8.0 * n), mu / (16.0 * big_l))
        self.gamma = 1.0
        self.C3 = 1.0 / (32.0 * n)


def lyapunov_constants(n, mu, big_l):
    return LyapunovConstants(n, mu, big_l)


class ConstraintSet:
    """Coefficients B0..B9, the derived C0..C2, and the nine feasibility
    residuals, sign convention: residual >= 0 means the constraint holds.

    When B3 or B4 is not strictly positive the C divisions are undefined;
    the dependent residuals are reported as NaN, which any satisfaction
    check must treat as failure.
    """

    def __init__(self, coefficients, residuals):
        self.coefficients = dict(coefficients)
        self.residuals = dict(residuals)

    def satisfied(self, tol=-1e-12):
        for v in self.residuals.values():
            if not v >= tol:  # NaN fails this comparison
                return False
        return True

    def worst(self):
        name = min(self.residuals,
                   key=lambda k: (np.inf if np.isnan(self.residuals[k])
                                  else self.residuals[k]))
        if any(np.isnan(v) for v in self.residuals.values()):
            name = next(k for k, v in self.residuals.items() if np.isnan(v))
        return name, self.residuals[name]


def constraint_residuals(consts, n, mu, big_l):
    """Evaluate the feasibility system at (n, mu, L).

    ``consts`` may be None, in which case the constants are built here.
    The one simplification baked into B4 is dropping its (1-delta) mu h d^2
    term, which only strengthens the constraint.
    """
    if consts is None:
        consts = lyapunov_constants(n, mu, big_l)
    a1, a2, b, c = consts.a1, consts.a2, consts.b, consts.c
    h, d, alpha = consts.h, consts.d, consts.alpha
    delta, gamma, C3 = consts.delta, consts.gamma, consts.C3
    an = alpha / n

    B0 = 2.0 * delta * h
    B1 = 2.0 * (b - an * c)
    B2 = 2.0 * (an - d) * h
    B3 = -((1.0 - 2.0 / n) * a2
           + (1.0 / n) * (a1 + a2 - 2.0 * an * b + an * an * c)
           - (1.0 - delta) * a2
           + big_l * h * (1.0 / n) * (d - an) ** 2)
    B4 = -n * ((1.0 - 2.0 / n) * (a1 - 2.0 * an * b + an * an * c)
               - (1.0 - delta) * a1
               + big_l * (1.0 - 2.0 / n) * h * (d - an) ** 2) + B3
    B5 = 2.0 * ((delta - 1.0 / n) * b - an * (1.0 - 1.0 / n) * c)
    B6 = -(2.0 / n) * (h * big_l * (d - an) ** 2
                       + a1 - 2.0 * an * b + an * an * c)
    B7 = (2.0 * (h * big_l * (d - an) ** 2 + a1 - 2.0 * an * b + an * an * c)
          + 2.0 * (h * (d - an) * (1.0 - 1.0 / n) - h * (1.0 - delta) * d))
    B8 = (1.0 / n) * (a1 + a2 - 2.0 * an * b + an * an * c) \
        + (big_l / n) * h * (d - an) ** 2
    B9 = c * delta

    coeff = {"B0": B0, "B1": B1, "B2": B2, "B3": B3, "B4": B4,
             "B5": B5, "B6": B6, "B7": B7, "B8": B8, "B9": B9}
    res = {}
    res["B3_nonneg"] = B3
    res["B4_nonneg"] = B4
    if B3 > 0.0 and B4 > 0.0:
        C0 = -B0 * mu / 2.0 + B9 + (n / 4.0) * B5 ** 2 / B4
        C1 = B0 + B1 + (n * big_l / 4.0) * B6 ** 2 / B3 \
            + (n / 2.0) * B5 * (B6 + B7) / B4 + n * big_l * B8
        C2 = -B2 - (n / 4.0) * B6 ** 2 / B3 + (n / 4.0) * (B6 + B7) ** 2 / B4
        coeff.update(C0=C0, C1=C1, C2=C2)
        res["C2_nonpos"] = -C2
        res["C1_C3_nonpos"] = -(C1 + C3)
        res["quad_nonpos"] = -(C0 + mu * (C1 + C3) + mu * mu * C2)
    else:
        coeff.update(C0=float("nan"), C1=float("nan"), C2=float("nan"))
        res["C2_nonpos"] = float("nan")
        res["C1_C3_nonpos"] = float("nan")
        res["quad_nonpos"] = float("nan")
    coeff["C3"] = C3
    denom = n * a1 + a2 + n * mu * d * d
    res["denom_nonneg"] = denom
    if denom > 0.0:
        res["domination"] = (big_l / 2.0) * (2.0 * h - gamma) + c \
            - n * (d * big_l + b) ** 2 / denom
    else:
        res["domination"] = float("nan")
    res["2h_le_gamma"] = -(2.0 * h - gamma)
    res["h_nonneg"] = h
    ordered = {name: res[name] for name in _RESIDUAL_NAMES}
    return ConstraintSet(coeff, ordered)


class GridReport:
    """Feasibility check over a grid of (n, mu/L) points."""

    def __init__(self, rows, violations, tol):
        self.rows = rows
        self.violations = violations
        self.tol = tol

    @property
    def ok(self):
        return not self.violations

    def to_csv(self):
        lines = ["n,mu_ratio,constraint_name,residual,satisfied"]
        for n, ratio, name, value in self.rows:
            sat = "yes" if value >= self.tol else "no"
            lines.append("%d,%.17g,%s,%.17g,%s" % (n, ratio, name, value, sat))
        return "\n".join(lines) + "\n"


def verify_grid(n_values, mu_ratio_values, big_l=1.0, tol=-1e-12):
    """Evaluate every residual at every grid point and collect violations.

    The tolerance absorbs floating-point evaluation of formulas that are
    exactly zero at boundary parameters; NaN residuals count as violations.
    """
    rows = []
    violations = []
    for n in n_values:
        if n < 2:
            raise ValueError("the certificate assumes n >= 2")
    for ratio in mu_ratio_values:
        if not 0.0 <= ratio <= 1.0:
            raise ValueError("mu/L ratios must lie in [0, 1]")
    for n in n_values:
        for ratio in mu_ratio_values:
            cs = constraint_residuals(None, n, ratio * big_l, big_l)
            for name, value in cs.residuals.items():
                rows.append((int(n), float(ratio), name, float(value)))
                if not value >= tol:
                    violations.append((int(n), float(ratio), name,
                                       float(value)))
    return GridReport(rows, violations, tol)
