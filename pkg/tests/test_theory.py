from math import exp, sqrt

import numpy as np
import pytest

from sagopt.theory import (ConstraintSet, GridReport, constraint_residuals,
                           least_squares_rates, lyapunov_constants,
                           rate_table, sag_bound, sag_rate, verify_grid)

ACCEPT_N = (2, 3, 4, 5, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096)
ACCEPT_RATIOS = (0.0, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0)


def test_per_pass_table_well_conditioned():
    table = dict(rate_table(100000, 0.01, 100.0))
    shown = {k: "%.4f" % v for k, v in table.items()}
    assert shown == {
        "fg": "0.9998",
        "fg_fast": "0.9996",
        "afg": "0.9900",
        "lower_bound": "0.9608",
        "miso": "0.9999",
        "sag": "0.8825",
    }


def test_per_pass_table_badly_conditioned():
    table = dict(rate_table(100000, 1e-4, 100.0))
    shown = {k: "%.4f" % v for k, v in table.items()}
    assert shown == {
        "fg": "1.0000",
        "fg_fast": "1.0000",
        "afg": "0.9990",
        "lower_bound": "0.9960",
        "miso": "1.0000",
        "sag": "0.9938",
    }


def test_rate_table_key_order():
    keys = [k for k, _ in rate_table(10, 1.0, 2.0)]
    assert keys == ["fg", "fg_fast", "afg", "lower_bound", "miso", "sag"]


def test_sag_rate_regimes():
    # which branch of the min is active depends on n against L/mu
    assert sag_rate(2, 1.0, 1.0) == 1.0 - 1.0 / 16.0
    assert sag_rate(10 ** 6, 1.0, 1.0) == 1.0 - 1.0 / (8.0 * 10 ** 6)
    assert sag_rate(4, 0.9, 1.0) == 1.0 - 1.0 / 32.0
    assert sag_rate(4, 0.0, 1.0) == 1.0  # no geometric decay without mu
    # monotone in mu for fixed n
    rates = [sag_rate(100, m, 1.0) for m in (0.0, 1e-4, 1e-3, 1e-2)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_rate_input_validation():
    with pytest.raises(ValueError, match="n must"):
        sag_rate(0, 0.1, 1.0)
    with pytest.raises(ValueError, match="positive"):
        sag_rate(5, 0.0, 0.0)
    with pytest.raises(ValueError, match="mu must"):
        sag_rate(5, 2.0, 1.0)


def test_per_pass_sag_rate_bounded_by_exponential():
    # (1 - 1/8n)^n <= exp(-1/8) for every n
    for n in (1, 2, 10, 1000, 10 ** 6):
        assert (1.0 - 1.0 / (8.0 * n)) ** n <= exp(-1.0 / 8.0)


# -- non-asymptotic bound --------------------------------------------------

def test_bound_constant_zero_init():
    bound, c0 = sag_bound(1, "zero", g0_gap=1.0, dist0_sq=1.0, sigma_sq=0.0,
                          n=4, big_l=2.0, mu=0.0)
    assert c0 == 1.0 + (4.0 * 2.0 / 4.0) * 1.0  # 3.0
    assert bound == 32.0 * 4 * c0 / 1

    _, c0v = sag_bound(5, "zero", g0_gap=0.0, dist0_sq=0.0, sigma_sq=32.0,
                       n=4, big_l=2.0, mu=0.0)
    assert c0v == 32.0 / 32.0


def test_bound_constant_centered_drops_variance():
    _, a = sag_bound(3, "centered", g0_gap=2.0, dist0_sq=1.0, sigma_sq=0.0,
                     n=8, big_l=1.0, mu=0.5)
    _, b = sag_bound(3, "centered", g0_gap=2.0, dist0_sq=1.0, sigma_sq=1e9,
                     n=8, big_l=1.0, mu=0.5)
    assert a == b == 1.5 * 2.0 + (4.0 / 8.0) * 1.0


def test_bound_geometric_vs_averaged_branch():
    bound, c0 = sag_bound(10, "zero", 1.0, 0.0, 0.0, n=4, big_l=1.0, mu=0.5)
    assert bound == sag_rate(4, 0.5, 1.0) ** 10 * c0
    bound0, _ = sag_bound(10, "zero", 1.0, 0.0, 0.0, n=4, big_l=1.0, mu=0.0)
    assert bound0 == 32.0 * 4 * 1.0 / 10


def test_bound_validation():
    with pytest.raises(ValueError, match="k must"):
        sag_bound(0, "zero", 1.0, 1.0, 0.0, 4, 1.0, 0.0)
    with pytest.raises(ValueError, match="init_mode"):
        sag_bound(1, "warm", 1.0, 1.0, 0.0, 4, 1.0, 0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        sag_bound(1, "zero", -1.0, 1.0, 0.0, 4, 1.0, 0.0)


# -- certificate -----------------------------------------------------------

def test_constants_small_case():
    c = lyapunov_constants(2, 0.5, 1.0)
    assert c.h == 0.0
    assert c.b == -0.0625
    assert c.c == 2.0
    assert c.a1 == 3.0 / 256.0
    assert c.a2 == 2.0 * c.a1
    assert c.alpha == 1.0 / 16.0
    assert c.delta == min(1.0 / 16.0, 0.5 / 16.0)
    assert c.gamma == 1.0
    with pytest.raises(ValueError, match="n >= 2"):
        lyapunov_constants(1, 0.5, 1.0)


def test_residuals_names_and_satisfaction():
    cs = constraint_residuals(None, 8, 0.01, 1.0)
    assert list(cs.residuals) == [
        "B3_nonneg", "B4_nonneg", "C2_nonpos", "C1_C3_nonpos", "quad_nonpos",
        "domination", "denom_nonneg", "2h_le_gamma", "h_nonneg",
    ]
    assert cs.satisfied(tol=-1e-12)
    name, value = cs.worst()
    assert name in cs.residuals and value == cs.residuals[name]
    assert all(np.isfinite(v) for v in cs.residuals.values())


def test_nan_residual_counts_as_violation():
    cs = ConstraintSet({}, [("broken", float("nan")), ("fine", 1.0)])
    assert not cs.satisfied()
    assert cs.worst()[0] == "broken"


def test_acceptance_grid_is_feasible():
    report = verify_grid(ACCEPT_N, ACCEPT_RATIOS)
    assert report.ok
    assert report.violations == []
    assert len(report.rows) == len(ACCEPT_N) * len(ACCEPT_RATIOS) * 9


def test_grid_rejects_bad_inputs():
    with pytest.raises(ValueError, match="n >= 2"):
        verify_grid([1, 2], [0.0])
    with pytest.raises(ValueError):
        verify_grid([2], [1.5])


def test_grid_csv_shape():
    report = verify_grid([2, 4], [0.0, 0.5])
    text = report.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "n,mu_ratio,constraint_name,residual,satisfied"
    assert len(lines) == 1 + 4 * 9
    first = lines[1].split(",")
    assert first[0] == "2" and first[2] == "B3_nonneg" and first[4] == "yes"


def test_forced_violations_are_reported():
    report = verify_grid([2, 4], [0.0], tol=1e6)
    assert not report.ok
    assert len(report.violations) > 0


# -- least squares rate summary --------------------------------------------

def _sample_rates(**kw):
    base = dict(n=1000, p=50, lam=0.1, eig_max=400.0, row_sq_max=9.0,
                col_sq_max=120.0, eig_min=0.0, eig_min_gram=0.0)
    base.update(kw)
    return least_squares_rates(**base)


def test_ls_key_order_and_bounds():
    rows = _sample_rates()
    keys = [k for k, _, _ in rows]
    assert keys == ["primal_fg", "primal_fg_fast", "dual_fg", "dual_fg_fast",
                    "primal_afg", "dual_afg", "primal_cd", "dual_cd",
                    "sdca_gap", "sag", "miso"]
    for key, rate, bound in rows:
        assert 0.0 <= rate <= 1.0, key
        assert rate <= bound * (1 + 1e-15), key


def test_ls_primal_dual_symmetry():
    # equal extreme eigenvalues on both sides collapse the two families
    rows = dict((k, r) for k, r, _ in
                _sample_rates(eig_min=25.0, eig_min_gram=25.0))
    assert rows["primal_fg"] == pytest.approx(rows["dual_fg"], rel=1e-12)
    assert rows["primal_fg_fast"] == pytest.approx(rows["dual_fg_fast"],
                                                   rel=1e-12)
    assert rows["primal_afg"] == pytest.approx(rows["dual_afg"], rel=1e-12)


def test_ls_sdca_matches_unregularized_dual_cd():
    rows = dict((k, r) for k, r, _ in _sample_rates(eig_min_gram=0.0))
    assert rows["sdca_gap"] == pytest.approx(rows["dual_cd"], rel=1e-14)


def test_ls_validation():
    with pytest.raises(ValueError, match="lam > 0"):
        least_squares_rates(10, 5, 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        least_squares_rates(10, 5, 0.1, -1.0, 1.0, 1.0)
