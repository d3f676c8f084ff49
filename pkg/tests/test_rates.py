import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locg import laplacian2d_spectrum, spectral_summary
from locg.problems import cluster_outlier_spectrum, outlier_cluster_spectrum
from locg.rates import (block_gamma_first, bound_C, chebyshev_T, chebyshev_T_recurrence, chi,
                        chi1, chi_direct, gamma_history, gamma_tilde_history, multi_step_bound,
                        omega, omega_alt, per_step_bound, rate_bound, rate_report, rate_summary,
                        roundoff_floor, scalar_sigma_diagnostic, sigma_scalar,
                        deflated_C, trace_bound_report)

SIGMAS = (1, 1.5, 4, 25)
CS = (0.01, 0.5, 0.99)

# 40-digit reference values (mpmath, defining quotients)
CHI_1_HALF = 0.09175170953613698363
OMEGA_1_HALF = 0.35505102572168219018
CHI1_HALF_2 = 0.04587585476806849182


def test_chebyshev_examples():
    assert chebyshev_T(1, 3.7) == pytest.approx(3.7, rel=1e-15)
    assert chebyshev_T(0, 12.0) == 1.0
    t = 1 / 0.8331
    assert chebyshev_T(2, t) == pytest.approx(2 * t * t - 1, rel=1e-13)
    with pytest.raises(ValueError):
        chebyshev_T(2, 0.5)
    assert chebyshev_T(3, -2.0) == pytest.approx(chebyshev_T_recurrence(3, -2.0), rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(m=st.integers(0, 8), t=st.floats(1.0, 1e4))
def test_chebyshev_forms_agree(m, t):
    a, b = chebyshev_T(m, t), chebyshev_T_recurrence(m, t)
    assert abs(a - b) <= 1e-12 * abs(b)


@pytest.mark.parametrize("values, expected", [
    (laplacian2d_spectrum(50), (0.9943, 0.9775, 0.9504)),
    (cluster_outlier_spectrum(1000), (0.9922, 0.9694, 0.9329)),
    (outlier_cluster_spectrum(1000), (0.6940, 0.2824, 0.0908)),
])
def test_bound_C_constants(values, expected):
    s = spectral_summary(values)
    assert tuple(round(bound_C(s, m), 4) for m in (1, 2, 3)) == expected
    for m in (1, 2, 3):
        assert 0 < bound_C(s, m) < 1


def test_bound_C_two_point_spectrum():
    assert bound_C(spectral_summary([0.0, 1.0, 1.0]), 1) == 0.0


def test_frozen_values():
    assert chi(1, 0.5) == pytest.approx(CHI_1_HALF, rel=1e-14)
    assert chi_direct(1, 0.5) == pytest.approx(CHI_1_HALF, rel=1e-14)
    assert omega(1, 0.5) == pytest.approx(OMEGA_1_HALF, rel=1e-14)
    assert omega_alt(1, 0.5) == pytest.approx(OMEGA_1_HALF, rel=1e-14)
    assert chi1(0.5, 2) == pytest.approx(CHI1_HALF_2, rel=1e-14)
    assert chi1(0.3, 1) == chi(1, 0.3)


def test_zero_C():
    for s in SIGMAS:
        assert chi(s, 0.0) == 0.0 and omega(s, 0.0) == 0.0 and omega_alt(s, 0.0) == 0.0


def test_domain_errors():
    with pytest.raises(ValueError):
        chi(0.5, 0.5)
    with pytest.raises(ValueError):
        omega(1, 1.0)
    with pytest.raises(ValueError):
        chi1(0.5, 0)


def test_forms_agree_on_grid():
    for s in SIGMAS:
        for C in CS:
            assert abs(chi(s, C) - chi_direct(s, C)) <= 1e-12 * chi(s, C)
            assert abs(omega(s, C) - omega_alt(s, C)) <= 1e-12 * omega(s, C)


def test_monotonicity_and_chain_on_grid():
    for C in CS:
        for s0, s1 in zip(SIGMAS, SIGMAS[1:]):
            assert chi(s1, C) < chi(s0, C) and omega(s1, C) < omega(s0, C)
        for s in SIGMAS:
            assert chi(s, C) <= chi(1, C) < (C / (2 - C)) ** 2 < C * C
            assert omega(s, C) <= omega(1, C) < C
    for s in SIGMAS:
        for C0, C1 in zip(CS, CS[1:]):
            assert chi(s, C0) < chi(s, C1) and omega(s, C0) < omega(s, C1)


def test_chi1_bound():
    for mh in (1, 2, 3, 4):
        for C in (0.1, 0.5, 0.9, 0.99):
            assert chi1(C, mh) <= C ** (1 + mh)


@settings(max_examples=100, deadline=None)
@given(s=st.floats(1.0, 1e6), C=st.floats(0.0, 0.999999))
def test_rate_ranges(s, C):
    assert 0 <= chi(s, C) < 1 and 0 <= omega(s, C) < 1
    assert chi(s, C) <= chi(1, C) * (1 + 1e-12)


def test_step_bounds():
    assert per_step_bound(7.0, 0.4, 0) == 0.4
    assert per_step_bound(1.0, 0.4, 1) == pytest.approx(math.sqrt(chi(1, 0.4)))
    assert per_step_bound(0.3, 0.4, 1) == per_step_bound(1.0, 0.4, 1)
    assert multi_step_bound(2.0, 0.4, 2) == min(chi(2.0, 0.4), chi1(0.4, 2))
    rb = rate_bound(spectral_summary(outlier_cluster_spectrum()), 1, 0)
    assert rb.sigma == 0.0 and rb.step_span == 1
    rb = rate_bound(spectral_summary(outlier_cluster_spectrum()), 2, 2, 1.5)
    assert rb.step_span == 3 and rb.chi == chi(1.5, rb.C_cheb)


def test_gamma_history_definition(rng):
    rs = [rng.standard_normal(6) for _ in range(4)]
    g = gamma_history(rs)
    rk = rs[-1]
    for j in range(1, 4):
        assert g[j - 1] == pytest.approx((rs[3 - j] - rs[4 - j]) @ rk / (rk @ rk))
    with pytest.raises(ZeroDivisionError):
        gamma_history([rs[0], np.zeros(6)])


def test_gamma_one_is_minus_one_for_orthogonal_residuals():
    e = np.eye(3)
    d = scalar_sigma_diagnostic(5, [e[0], e[1], 2 * e[2]])
    assert d.gamma_1 == -1 and d.sigma == 1.0 and not d.flags
    d = scalar_sigma_diagnostic(5, [e[0], e[1] + 1e-3 * e[2], e[2]])
    assert d.flags


def test_gamma_tilde():
    r = [np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0]), np.array([0, 0, 1.0, 0])]
    assert gamma_tilde_history(r, r[-1]) == gamma_history(r)
    q = r[-1] + np.array([0.3, -0.2, 0.0, 0.5])
    g = gamma_tilde_history(r, q)
    # direct: (r_{k-1} - r_k)^T q and (r_{k-2} - r_{k-1})^T q, over |r_k|^2 = 1
    assert g == pytest.approx([-0.2 - 1.0, 0.3 + 0.2])


def test_sigma_scalar_examples():
    assert sigma_scalar([]) == 1.0
    assert sigma_scalar([0.3, -0.2]) == pytest.approx(2.25)


def test_block_gamma_stagnated_is_unavailable(rng):
    from locg import HermitianOperator
    A = HermitianOperator.from_dense(np.diag(np.arange(1.0, 7.0)))
    X = np.linalg.qr(rng.standard_normal((6, 2)))[0]
    R = A.apply(X) - X @ (X.T @ A.apply(X))
    rho = np.diag(X.T @ A.apply(X))
    d = block_gamma_first(A, X, X, R, rho, rho, rho[0] - 0.1)
    assert not d.available and "stagnated" in d.flags[0]
    with pytest.raises(ValueError):
        block_gamma_first(A, X[:, :1], X[:, :1], R[:, :1], rho[:1], rho[:1], 0.0)


def test_rate_report_floor_and_constants():
    s = spectral_summary(laplacian2d_spectrum(50))
    floor = roundoff_floor(s)
    assert floor == pytest.approx(1e2 * np.finfo(float).eps * 8, rel=1e-3)
    errs = [1.0 * 0.9 ** k for k in range(40)] + [1e-20] * 10
    rows = rate_report(errs, [1.0] * 50, s, 2, 1)
    assert rows, "head of the tail window is reported"
    assert all(r.err > floor for r in rows)
    C2 = bound_C(s, 2)
    assert round(C2, 4) == 0.9775
    assert rows[0].bound == pytest.approx(math.sqrt(chi(1, C2)))
    summ = rate_summary(rows)
    assert summ["geomean_two_step"] == pytest.approx(0.81)
    assert rate_summary([])["n"] == 0


def test_deflated_C():
    v = np.array([0.0, 1.0, 1.0, 3.0, 9.0])
    # i = 0: kappa = 9, i = 1 and 2 (double value): next distinct is 3, kappa = 8/2
    assert deflated_C(v, 1) == pytest.approx((8 / 10) ** 2)
    assert deflated_C(v, 3) == pytest.approx((8 / 10) ** 2)
    assert deflated_C(np.array([0.0, 2.0, 4.0, 9.0]), 2) == pytest.approx((3.5 / 5.5) ** 2)
    assert deflated_C(np.array([1.0, 2.0]), 1) == 0.0


def test_trace_bound_report_on_geometric_errors():
    lam = np.array([0.0, 1.0, 2.0, 10.0])
    T = np.array([0.5 ** k for k in range(30)])
    ritz = np.column_stack([lam[0] + 0.7 * T, lam[1] + 0.3 * T])
    rows = trace_bound_report(ritz, lam, [1.0] * 30)
    assert rows and rows[0].iter == 16
    assert all(r.two_step == pytest.approx(0.25) for r in rows)
    assert rows[0].bound == pytest.approx(chi(1.0, deflated_C(lam, 2)))


@pytest.mark.parametrize("nb", [2, 3])
def test_block_trace_bound_partial(nb):
    from locg import SolverConfig, laplacian2d, locg_solve, start_block
    A, _ = laplacian2d(20)
    _, trace, out = locg_solve(A, None, start_block(A.n, nb, 0), SolverConfig(nb, 1, 1, max_iter=2000))
    assert out != "breakdown"
    rows = trace_bound_report(trace.ritz_matrix(), laplacian2d_spectrum(20), trace.sigmas())
    assert len(rows) >= 10
    assert np.median([r.ratio_vs_bound for r in rows]) <= 1.1


def test_h_over_sqrt_delta_stays_bounded():
    from locg import SolverConfig, cluster_outlier, laplacian2d, locg_solve, start_block
    for A, _ in (laplacian2d(20), cluster_outlier(0)):
        _, trace, _ = locg_solve(A, None, start_block(A.n, 2, 1), SolverConfig(2, 1, 1, max_iter=400))
        h = [r.diagnostic.block_terms["h_over_sqrt_delta"] for r in trace.records
             if r.diagnostic is not None and "h_over_sqrt_delta" in r.diagnostic.block_terms]
        tail = np.asarray(h[len(h) // 2:], dtype=float)
        assert tail.size >= 5 and np.all(np.isfinite(tail))
        assert tail.max() <= 1.0
