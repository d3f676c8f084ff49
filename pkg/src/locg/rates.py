"""Convergence-rate functions and per-iteration rate diagnostics.

``C`` is the Chebyshev contraction ``T_m(1/Delta)^-2`` of a degree-``m``
polynomial sweep; ``chi(sigma, C)`` bounds the error reduction over
``m_h + 1`` steps of the locally optimal iteration and ``omega(sigma, C)``
the one-step reduction when that bound is attained.
"""

import decimal
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# Chebyshev bounds
# ---------------------------------------------------------------------------

def chebyshev_T(m, t):
    """First-kind Chebyshev polynomial T_m(t) for |t| >= 1 (hyperbolic form)."""
    if m < 0:
        raise ValueError("degree must be non-negative")
    if abs(t) < 1:
        raise ValueError("chebyshev_T is only evaluated for |t| >= 1")
    if m == 0:
        return 1.0
    if t >= 1:
        return math.cosh(m * math.acosh(t))
    return (-1) ** m * math.cosh(m * math.acosh(-t))


def chebyshev_T_recurrence(m, t):
    """T_m(t) by the three-term recurrence T_{j+1} = 2t T_j - T_{j-1}."""
    a, b = 1.0, t
    if m == 0:
        return a
    for _ in range(m - 1):
        a, b = b, 2 * t * b - a
    return b


def bound_C(summary, m_e):
    """T_{m_e}(1/Delta)^{-2}; zero when the spectrum has two points (kappa = 1)."""
    if m_e < 1:
        raise ValueError("m_e must be at least 1")
    if summary.kappa <= 1.0 or summary.delta <= 0.0:
        return 0.0
    return chebyshev_T(m_e, 1.0 / summary.delta) ** -2


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------

def _check(sigma, C):
    if sigma < 1:
        raise ValueError("sigma must be >= 1")
    if not 0 <= C < 1:
        raise ValueError("C must lie in [0, 1)")


def chi(sigma, C):
    """(1+m_h)-step rate, evaluated in the cancellation-free form."""
    _check(sigma, C)
    s = math.sqrt(sigma * (sigma + C))
    return C * C / (1 + (1 - C) * (2 * sigma - 1 + 2 * s))


def chi_direct(sigma, C):
    """Same value as ``chi`` from the defining quotient.

    The numerator cancels to about C^2/(4 sigma), so the quotient is evaluated
    in 40-digit decimal arithmetic; in doubles it loses up to ~1e-9 relative.
    """
    with decimal.localcontext() as ctx:
        ctx.prec = 40
        sg, c = decimal.Decimal(sigma), decimal.Decimal(C)
        s = (sg * (sg + c)).sqrt()
        return float((2 * sg + c - 2 * s) / (2 * sg + 1 - 2 * s))


def omega(sigma, C):
    """One-step rate attained when the multi-step bound is tight."""
    _check(sigma, C)
    s = math.sqrt(sigma * (sigma + C))
    return (sigma + C - (1 - C) * s) / (1 + sigma * (2 - C))


def omega_alt(sigma, C):
    return C / (1 + (1 - C) * math.sqrt(sigma / (sigma + C)))


def chi1(C, m_h):
    """chi(1,C)^floor((1+m_h)/2) * C^((1+m_h) mod 2); never exceeds C^(1+m_h)."""
    if m_h < 1:
        raise ValueError("m_h must be at least 1")
    p = (1 + m_h) // 2
    return chi(1.0, C) ** p * C ** ((1 + m_h) - 2 * p)


def per_step_bound(sigma, C, m_h):
    """Average one-step contraction implied by the multi-step bound."""
    if m_h == 0:
        return C
    return chi(max(sigma, 1.0), C) ** (1.0 / (1 + m_h))


def multi_step_bound(sigma, C, m_h):
    if m_h == 0:
        return C
    return min(chi(max(sigma, 1.0), C), chi1(C, m_h))


@dataclass
class RateBound:
    kappa: float
    delta: float
    m_e: int
    m_h: int
    C_cheb: float
    sigma: float
    chi: float
    omega: float
    chi1: float
    step_span: int


def rate_bound(summary, m_e, m_h, sigma=1.0):
    C = bound_C(summary, m_e)
    if m_h == 0:
        return RateBound(summary.kappa, summary.delta, m_e, 0, C, 0.0, C * C, C, C, 1)
    return RateBound(summary.kappa, summary.delta, m_e, m_h, C, sigma,
                     chi(sigma, C), omega(sigma, C), chi1(C, m_h), m_h + 1)


# ---------------------------------------------------------------------------
# sigma diagnostics
# ---------------------------------------------------------------------------

@dataclass
class SigmaDiagnostic:
    iter: int
    gammas: list
    sigma: float
    variant: str
    available: bool = True
    gamma_1: Optional[float] = None
    block_terms: Optional[dict] = None
    flags: list = field(default_factory=list)


def _vec(v):
    return np.asarray(v).ravel()


def gamma_history(residuals):
    """gamma_j = (r_{k-j} - r_{k-j+1})^H r_k / r_k^H r_k for j = 1..len-1.

    ``residuals`` runs oldest first and ends with r_k.
    """
    return gamma_tilde_history(residuals, residuals[-1])


def gamma_tilde_history(residuals, q):
    """As ``gamma_history`` with the extended direction q_k in the inner product."""
    rs = [_vec(r) for r in residuals]
    rk = rs[-1]
    nrm2 = np.vdot(rk, rk).real
    if nrm2 == 0:
        raise ZeroDivisionError("current residual is zero")
    q = _vec(q)
    m = len(rs) - 1
    out = []
    for j in range(1, m + 1):
        diff = rs[m - j] - rs[m - j + 1]
        out.append(np.vdot(diff, q) / nrm2)
    return [float(g.real) if np.isrealobj(q) and np.isrealobj(rs[0]) else complex(g) for g in out]


def sigma_scalar(gammas):
    """(1 + |gamma_2| + ... + |gamma_{m_h}|)^2 from the list gamma_2..gamma_{m_h}."""
    return (1.0 + float(np.sum(np.abs(gammas)))) ** 2


def scalar_sigma_diagnostic(it, residuals, q=None, gamma1_tol=1e-6):
    """sigma from a residual history r_{k-m_h}..r_k (and q_k for m_e > 1)."""
    variant = "scalar-history" if q is None else "extended-history"
    gammas = gamma_history(residuals) if q is None else gamma_tilde_history(residuals, q)
    flags = []
    g1 = gammas[0] if gammas else None
    if g1 is not None and abs(g1 + 1) > gamma1_tol:
        flags.append("gamma_1 deviates from -1 (loss of orthogonality)")
    return SigmaDiagnostic(it, list(gammas), sigma_scalar(gammas[1:]), variant,
                           gamma_1=g1, flags=flags)


def block_gamma_first(A, X, X_prev, R, rho, rho_prev, rho_next_1, AR=None, it=0,
                      rank_cond=1e12):
    """gamma_{k,(1)}^2 of the block iteration LOCG(n_b, 1, 1), full and shrunk forms.

    ``X``, ``R``, ``rho`` describe iterate k, ``X_prev``/``rho_prev`` iterate
    k-1, and ``rho_next_1`` is the smallest Ritz value of iterate k+1.  Columns
    are assumed sign-aligned between iterates.  ``AR`` (= A R) avoids operator
    applications when supplied.
    """
    X = np.asarray(X)
    R = np.asarray(R)
    rho = np.asarray(rho, dtype=float)
    rho_prev = np.asarray(rho_prev, dtype=float)
    nb = X.shape[1]
    if nb < 2:
        raise ValueError("block_gamma_first needs n_b >= 2")
    delta_prev = rho_prev - rho
    d1 = float(delta_prev[0])
    diag = SigmaDiagnostic(it, [], float("nan"), "block-first-column", available=False)
    if not d1 > 1e-300:
        diag.flags.append("stagnated: delta_{k-1,(1)} is not positive")
        return diag
    E2 = rho[1:] - rho_next_1
    if np.any(E2 == 0):
        diag.flags.append("E_{k,(2:n_b)} singular")
        return diag
    d2 = delta_prev[1:]
    Einv = 1.0 / E2

    Gam = X.conj().T @ np.asarray(X_prev)
    h = Gam[1:, 0]
    H = Gam[1:, 1:]
    M = np.diag(Einv) - (H * Einv) @ H.conj().T + np.diag(Einv * d2 / (E2 + d2))
    M = 0.5 * (M + M.conj().T)

    if AR is None:
        AR = A.apply(R)
    r1, R2 = R[:, 0], R[:, 1:]
    Ar1, AR2 = AR[:, 0], AR[:, 1:]
    n1 = np.vdot(r1, r1).real
    if n1 == 0:
        diag.flags.append("first residual is zero")
        return diag
    c = (r1.conj() @ R2) / n1
    Rp = R2 - np.outer(r1, c)
    ARp = AR2 - np.outer(Ar1, c)
    T = Rp.conj().T @ ARp - rho_next_1 * (Rp.conj().T @ Rp)
    T = 0.5 * (T + T.conj().T)
    Tw = np.linalg.eigvalsh(T)
    Tscale = max(abs(Tw).max(), np.finfo(float).tiny)
    if Tw.size and np.min(np.abs(Tw)) < Tscale / rank_cond:
        diag.flags.append("R_perp rank deficient: least-squares solve used")

    def Tsolve(b):
        return np.linalg.lstsq(T, b, rcond=1.0 / rank_cond)[0]

    phi2 = (Ar1 - rho[0] * r1) / n1          # Phi_2
    w = Rp.conj().T @ phi2                   # R_perp^H Phi_2
    phi2_psi_phi2 = float(np.real(np.vdot(w, Tsolve(w))))
    G = Rp.conj().T @ Rp
    phi1 = Einv * ((R2.conj().T @ r1) / n1 - G @ Tsolve(w))
    psi21_psi22_psi21 = (Einv[:, None] * (G @ Tsolve(G))) * Einv[None, :]

    u = h / d1 + phi1
    mid = M - np.outer(h, h.conj()) / d1 - psi21_psi22_psi21
    mid = 0.5 * (mid + mid.conj().T)
    gamma_sq_full = float(np.real(d1 * (np.vdot(u, np.linalg.solve(mid, u)) + phi2_psi_phi2)))

    Mw = np.linalg.eigvalsh(M)
    tau_sq = float(np.real(np.vdot(h, np.linalg.solve(M, h)))) / d1
    gamma_sq_shrink = tau_sq / (1 - tau_sq) + d1 * phi2_psi_phi2

    if Mw[0] < -1e-10 * max(abs(Mw).max(), 1.0):
        diag.flags.append("theory precondition violated: M_k not positive definite")
    if not 0 <= tau_sq < 1:
        diag.flags.append("theory precondition violated: tau_k^2 outside [0, 1)")

    diag.available = True
    diag.gammas = [math.sqrt(max(gamma_sq_shrink, 0.0))]
    diag.sigma = 1.0 + gamma_sq_shrink
    diag.block_terms = {
        "tau_sq": tau_sq,
        "M_condition": float(abs(Mw).max() / max(abs(Mw).min(), np.finfo(float).tiny)),
        "M_min_eig": float(Mw[0]),
        "phi2_psi22_phi2": phi2_psi_phi2,
        "gamma_sq_full": gamma_sq_full,
        "gamma_sq_shrink": gamma_sq_shrink,
        "sigma_full": 1.0 + gamma_sq_full,
        "h_norm": float(np.linalg.norm(h)),
        "h_over_sqrt_delta": float(np.linalg.norm(h) / math.sqrt(d1)),
    }
    return diag


# ---------------------------------------------------------------------------
# trace report
# ---------------------------------------------------------------------------

@dataclass
class RateRow:
    iter: int
    err: float                # eps_k = rho_{k,1} - lambda_1
    ratio: float              # eps_k / eps_{k-1}
    sigma: float
    bound: float              # per-step bound
    ratio_vs_bound: float
    two_step: float           # eps_k / eps_{k-2}
    multi_ratio: float        # eps_k / eps_{k-1-m_h}
    multi_bound: float        # min{chi(sigma,C), chi1(C)} (C for m_h = 0)


def roundoff_floor(summary):
    return 1e2 * EPS * max(abs(summary.lambda_1), abs(summary.lambda_n))


def rate_report(errors, sigmas, summary, m_e, m_h, tail=0.5):
    """Ratio table over the last ``tail`` fraction of iterations.

    ``errors[k]`` is rho_{k,1} - lambda_1 for k = 0..K and ``sigmas[k]`` the
    sigma of the step that produced iterate k (``sigmas[0]`` is unused).
    Iterations at or below the roundoff floor are excluded.
    """
    errors = np.asarray(errors, dtype=float)
    K = errors.size - 1
    C = bound_C(summary, m_e)
    floor = roundoff_floor(summary)
    start = max(1, K - int(math.floor(K * tail)) + 1)
    rows = []
    for k in range(start, K + 1):
        e, ep = errors[k], errors[k - 1]
        if not (e > floor and ep > floor):
            continue
        s = sigmas[k] if m_h > 0 else 0.0
        if m_h > 0 and not (s >= 1):
            s = 1.0
        b = per_step_bound(s, C, m_h)
        j = k - 1 - m_h
        if j >= 0 and errors[j] > floor:
            mr = e / errors[j]
        else:
            mr = float("nan")
        two = e / errors[k - 2] if k >= 2 and errors[k - 2] > floor else float("nan")
        rows.append(RateRow(k, e, e / ep, s, b, (e / ep) / b if b > 0 else float("inf"),
                            two, mr, multi_step_bound(s, C, m_h)))
    return rows


def rate_summary(rows):
    """Median of ratio-vs-bound and geometric mean of two-step ratios."""
    if not rows:
        return {"n": 0, "median_ratio_vs_bound": float("nan"), "geomean_two_step": float("nan")}
    rvb = np.array([r.ratio_vs_bound for r in rows])
    two = np.array([r.two_step for r in rows])
    two = two[np.isfinite(two)]
    return {
        "n": len(rows),
        "median_ratio_vs_bound": float(np.median(rvb)),
        "geomean_two_step": float(np.exp(np.mean(np.log(two)))) if two.size else float("nan"),
    }


# ---------------------------------------------------------------------------
# block trace bound
# ---------------------------------------------------------------------------

def deflated_C(values, n_b):
    """max_i Delta_(i)^2 over i < n_b, where Delta_(i) is the Delta of the problem
    deflated of the i smallest eigenvalues (gap to the next distinct one)."""
    v = np.sort(np.asarray(values, dtype=float))
    worst = 0.0
    for i in range(n_b):
        above = v[v > v[i] + 1e-12 * max(abs(v[0]), abs(v[-1]))]
        if above.size == 0 or above[0] == v[-1]:
            continue
        kappa = (v[-1] - v[i]) / (above[0] - v[i])
        worst = max(worst, ((kappa - 1) / (kappa + 1)) ** 2)
    return worst


@dataclass
class TraceRow:
    iter: int
    trace_err: float          # sum_i rho_{k,i} - lambda_i
    two_step: float           # trace_err_k / trace_err_{k-2}
    sigma: float
    bound: float              # chi(sigma_(1), C)
    ratio_vs_bound: float


def trace_bound_report(ritz, values, sigmas, tail=0.5):
    """Two-step trace ratios of a LOCG(n_b, 1, 1) run against chi(sigma, C).

    ``ritz[k]`` holds the n_b Ritz values of iterate k and ``values`` the
    spectrum (at least its n_b + 1 smallest and its largest entry).  The sigma
    of the bound takes a maximum over all columns; only the first column's
    diagnostic is available, and it is a lower bound, so the bound used here
    is weaker than the full one: a partial check.
    """
    ritz = np.atleast_2d(np.asarray(ritz, dtype=float))
    v = np.sort(np.asarray(values, dtype=float))
    n_b = ritz.shape[1]
    T = (ritz - v[:n_b]).sum(axis=1)
    C = deflated_C(v, n_b)
    floor = 1e2 * EPS * max(abs(v[0]), abs(v[-1])) * n_b
    K = T.size - 1
    start = max(2, K - int(math.floor(K * tail)) + 1)
    rows = []
    for k in range(start, K + 1):
        if not (T[k] > floor and T[k - 2] > floor):
            continue
        s = sigmas[k] if np.isfinite(sigmas[k]) and sigmas[k] >= 1 else 1.0
        b = chi(s, C)
        rows.append(TraceRow(k, T[k], T[k] / T[k - 2], s, b, (T[k] / T[k - 2]) / b))
    return rows
