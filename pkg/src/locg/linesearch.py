"""Exact line-search identities of a locally optimal step, as a correctness oracle.

A Rayleigh-Ritz step over span{x, v, W} (v = r(x), W^H r(x) = 0) is also the
exact minimizer of rho along x + alpha v + W b.  The five identities below tie
the new iterate, its residual and the optimal coefficients together; the
solver never uses them, they only check its output.

Residuals are written without inverses and divided by the size of their
largest term, so every entry of a report is dimensionless.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import as_block

COND_MAX = 1e12
IDENTITIES = ("a", "b", "c", "d", "e")


@dataclass
class LineSearchWitness:
    x: np.ndarray
    v: np.ndarray
    W: np.ndarray
    x_plus: np.ndarray
    d: np.ndarray
    alpha_plus: object
    b_plus: np.ndarray
    rho_x: object
    rho_plus: object
    lstsq_residual: float = 0.0


@dataclass
class IdentityReport:
    residuals: dict                         # name -> relative residual, or None if unchecked
    tol: float
    conditions: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    iter: Optional[int] = None

    @property
    def passed(self):
        vals = [r for r in self.residuals.values() if r is not None]
        return bool(vals) and all(np.isfinite(r) and r <= self.tol for r in vals)

    @property
    def worst(self):
        vals = [r for r in self.residuals.values() if r is not None]
        return max(vals) if vals else float("nan")


def _rel(num, *terms):
    s = max([float(t) for t in terms] + [np.finfo(float).tiny])
    return float(num) / s


def _range(B, tol=1e-10):
    """Orthonormal basis of range(B), numerical rank at ``tol``."""
    if B.shape[1] == 0:
        return B
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    return U[:, : int(np.sum(s > tol * s[0]))] if s[0] > 0 else U[:, :0]


def _cond(M):
    if M.size == 0:
        return 1.0
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def _rq_tilde(A, X, AX=None):
    """rho~(X) = (X^H X)^{-1} X^H A X and r~(X) = A X - X rho~(X)."""
    if AX is None:
        AX = A.apply(X)
    rho = np.linalg.solve(X.conj().T @ X, X.conj().T @ AX)
    return rho, AX - X @ rho, AX


def make_witness(A, x, v, W, x_new):
    """Rescale ``x_new`` so that x^H (x_plus - x) = 0 and expand the step in [v, W]."""
    x, v, x_new = as_block(x), as_block(v), as_block(x_new)
    W = np.zeros((x.shape[0], 0), dtype=x.dtype) if W is None else as_block(W)
    x_plus = x_new @ np.linalg.inv(x.conj().T @ x_new) @ (x.conj().T @ x)
    d = x_plus - x
    B = np.hstack([v, W])
    coef, *_ = np.linalg.lstsq(B, d, rcond=None)
    res = np.linalg.norm(B @ coef - d) / max(np.linalg.norm(d), np.finfo(float).tiny)
    p = v.shape[1]
    rho_x, _, _ = _rq_tilde(A, x)
    rho_p, _, _ = _rq_tilde(A, x_plus)
    if x.shape[1] == 1:
        return LineSearchWitness(x[:, 0], v[:, 0], W, x_plus[:, 0], d[:, 0], coef[0, 0],
                                 coef[p:, 0], float(np.real(rho_x[0, 0])),
                                 float(np.real(rho_p[0, 0])), float(res))
    return LineSearchWitness(x, v, W, x_plus, d, coef[:p], coef[p:], rho_x, rho_p, float(res))


def witness_from_step(A, info):
    """Witness for a recorded solver step (unpreconditioned steps only).

    Built from the Ritz coefficients rather than from X_new - X: near
    convergence that difference cancels almost every digit.  The step starts
    from the basis copy of X (equal to X up to rounding), v is the unit
    residual direction and W the remaining basis columns.
    """
    if info.preconditioned:
        raise ValueError("identities are stated for K = I")
    lab = info.basis.labels
    ix = [i for i, l in enumerate(lab) if l[0] == "x"]
    iv = [i for i, l in enumerate(lab) if l[0] == "s" and l[1] == 1]
    if len(iv) != len(info.active) or len(ix) != len(info.active):
        raise ValueError("residual block lost rank in the search basis")
    iw = [i for i in range(len(lab)) if i not in ix and i not in iv]
    Z, Y = info.basis.Z, info.Y
    Yx = Y[ix]
    if _cond(Yx) > COND_MAX:
        raise ValueError("new iterate is orthogonal to the old one")
    x, V, W = Z[:, ix], Z[:, iv], Z[:, iw]
    a = np.linalg.solve(Yx.T, Y[iv].T).T
    b = np.linalg.solve(Yx.T, Y[iw].T).T
    d = V @ a + W @ b
    x_plus = x + d
    rho_x, _, _ = _rq_tilde(A, x)
    rho_p, _, _ = _rq_tilde(A, x_plus)
    if x.shape[1] == 1:
        return LineSearchWitness(x[:, 0], V[:, 0], W, x_plus[:, 0], d[:, 0], a[0, 0], b[:, 0],
                                 float(np.real(rho_x[0, 0])), float(np.real(rho_p[0, 0])))
    return LineSearchWitness(x, V, W, x_plus, d, a, b, rho_x, rho_p)


def _rounding_gate(res, cond, notes, tol, dropped, size):
    """(e) drops W^H F x, which is zero in exact arithmetic but carries rounding
    of order eps*|W||Ax|.  That error moves b_+ directly, so once it alone can
    exceed ``tol`` relative to the terms of (e) the identity is not checkable."""
    kappa = dropped / max(size, np.finfo(float).tiny)
    cond["rounding(e)"] = float(kappa)
    if np.finfo(float).eps * kappa > tol:
        res["e"] = None
        notes.append(f"(e) not checkable: b_+ is at rounding level (eps*kappa = {np.finfo(float).eps * kappa:.1e})")


def _witness_invariants(x, v, W, r, notes, conditions):
    if abs(np.vdot(v, r)) == 0:
        notes.append("v^H r(x) = 0")
    if W.shape[1]:
        wr = np.linalg.norm(W.conj().T @ r) / max(np.linalg.norm(W) * np.linalg.norm(r), 1e-300)
        conditions["W^H r"] = float(wr)
        if wr > 1e-10:
            notes.append("W^H r(x) is not zero")
    conditions["cond[x,v,W]"] = _cond(np.column_stack([x, v, W]))
    if conditions["cond[x,v,W]"] > 1e10:
        notes.append("[x, v, W] is numerically rank deficient")


def verify_vector_identities(A, w, tol=1e-8):
    """Relative residuals of identities (a)-(e) for a single-vector witness."""
    x, v, W, xp, d = (np.asarray(w.x), np.asarray(w.v), as_block(w.W) if np.size(w.W) else
                      np.zeros((np.size(w.x), 0)), np.asarray(w.x_plus), np.asarray(w.d))
    alpha, b = w.alpha_plus, np.asarray(w.b_plus).ravel()
    xx = np.vdot(x, x).real
    Ax, Axp, Ad = A.apply(x), A.apply(xp), A.apply(d)
    rho_x = np.vdot(x, Ax).real / xx
    rho_p = np.vdot(xp, Axp).real / np.vdot(xp, xp).real
    r = Ax - rho_x * x
    rp = Axp - rho_p * xp
    notes, cond = [], {}
    _witness_invariants(x, v, W, r, notes, cond)

    def proj(y):  # (I - P(x)) y
        return y - np.outer(x, x.conj() @ y / xx) if y.ndim == 2 else y - x * (np.vdot(x, y) / xx)

    def Fcheck(y, Ay):  # F-check(x) y = (I-P)(A - rho_+)(I-P) y
        py = proj(y)
        Apy = Ay - (np.outer(Ax, x.conj() @ y / xx) if y.ndim == 2 else Ax * (np.vdot(x, y) / xx))
        return proj(Apy - rho_p * py)

    res = {}
    # (a) r(x_+) orthogonal to [x, v, W, d]
    Q = _range(np.column_stack([x, v, W, d]))
    res["a"] = _rel(np.linalg.norm(Q.conj().T @ rp), np.linalg.norm(Axp), abs(rho_p) * np.linalg.norm(xp))
    # (b) alpha_+ r^H v = -d^H F(rho_+) d
    rv = np.vdot(r, v)
    dFd = np.vdot(d, Ad) - rho_p * np.vdot(d, d)
    res["b"] = _rel(abs(alpha * rv + dFd), abs(alpha * rv), abs(np.vdot(d, Ad)),
                    abs(rho_p) * np.vdot(d, d).real)
    # (c) rho_+ - rho = r^H v alpha_+ / x^H x
    lhs, rhs = rho_p - rho_x, rv * alpha / xx
    res["c"] = _rel(abs(lhs - rhs), abs(rho_x), abs(rho_p), abs(lhs), abs(rhs))
    # (d) r~(x_+) - r(x) = F-check(x) d
    Fd = Fcheck(d, Ad)
    res["d"] = _rel(np.linalg.norm(rp - r - Fd), np.linalg.norm(Axp), np.linalg.norm(Ax),
                    abs(rho_p) * np.linalg.norm(xp), np.linalg.norm(Ad) + abs(rho_p) * np.linalg.norm(d))
    # (e) W^H F W b_+ = -alpha_+ W^H F v
    if W.shape[1] == 0:
        res["e"] = None
        notes.append("(e) vacuous: W is empty")
    else:
        AW, Av = A.apply(W), A.apply(v)
        M = W.conj().T @ Fcheck(W, AW)
        g = W.conj().T @ Fcheck(v, Av)
        cond["cond(W^H F W)"] = _cond(M)
        if cond["cond(W^H F W)"] > COND_MAX:
            res["e"] = None
            notes.append("(e) not checkable: W^H F W is singular")
        else:
            nb, nv = np.linalg.norm(b), np.linalg.norm(v)
            size = max((np.linalg.norm(W.conj().T @ AW) + abs(rho_p)) * nb,
                       abs(alpha) * (np.linalg.norm(W.conj().T @ Av) + abs(rho_p) * nv))
            res["e"] = _rel(np.linalg.norm(M @ b + alpha * g), size)
            _rounding_gate(res, cond, notes, tol, np.linalg.norm(W) * (np.linalg.norm(Ax) + abs(rho_p)), size)
    return IdentityReport(res, tol, cond, notes)


def verify_block_identities(A, X, V, W, X_plus, a_plus, b_plus, tol=1e-8, D=None):
    """Block analogue: rho~, r~ and the maps L_X(Y) = A Y - Y rho~(X),
    L_{X;T}(Z) = T^H A T Z - T^H T Z rho~(X).  Pass the step ``D`` when it is
    known more accurately than X_plus - X."""
    X, V, X_plus = as_block(X), as_block(V), as_block(X_plus)
    p = X.shape[1]
    W = np.zeros((X.shape[0], 0), dtype=X.dtype) if W is None or np.size(W) == 0 else as_block(W)
    a = np.asarray(a_plus).reshape(p, p)
    b = np.asarray(b_plus).reshape(W.shape[1], p)
    D = X_plus - X if D is None else as_block(D)
    notes, cond = [], {}
    rho, r, AX = _rq_tilde(A, X)
    rho_p, rp, AXp = _rq_tilde(A, X_plus)
    AD, AV = A.apply(D), A.apply(V)
    XX = X.conj().T @ X
    nrm = np.linalg.norm
    cond["cond[X,V,W]"] = _cond(np.hstack([X, V, W]))
    if W.shape[1]:
        cond["W^H r"] = float(nrm(W.conj().T @ r) / max(nrm(W) * nrm(r), 1e-300))
    cond["cond(a_+)"] = _cond(a)

    def proj(Y):
        return Y - X @ np.linalg.solve(XX, X.conj().T @ Y)

    def L(Y, AY):
        return AY - Y @ rho_p

    res = {}
    Q = _range(np.hstack([X, V, W, D]))
    res["a"] = _rel(nrm(Q.conj().T @ rp), nrm(AXp), nrm(X_plus @ rho_p))
    LD = L(D, AD)
    rV = r.conj().T @ V
    res["b"] = _rel(nrm(rV @ a + LD.conj().T @ D), nrm(rV) * nrm(a), nrm(AD) * nrm(D),
                    nrm(D @ rho_p) * nrm(D))
    lhs = XX @ (rho_p - rho)
    rhs = rV @ a
    res["c"] = _rel(nrm(lhs - rhs), nrm(XX @ rho), nrm(XX @ rho_p), nrm(lhs), nrm(rhs))
    PLD = proj(LD)
    res["d"] = _rel(nrm(rp - r - PLD), nrm(AXp), nrm(AX), nrm(X_plus @ rho_p), nrm(AD) + nrm(D @ rho_p))
    if cond["cond(a_+)"] > COND_MAX:
        res["b"] = None
        res["e"] = None
        notes.append("locked direction: a_+ is singular")
    elif W.shape[1] == 0:
        res["e"] = None
        notes.append("(e) vacuous: W is empty")
    else:
        T = proj(W)
        AT = A.apply(T)
        TAT, TT = T.conj().T @ AT, T.conj().T @ T
        lhs = TAT @ b - TT @ b @ rho_p
        Va = V @ a
        rhs = -W.conj().T @ proj(L(Va, AV @ a))
        cond["cond(T^H F T)"] = _cond(TAT - float(np.real(np.trace(rho_p))) / p * TT)
        size = max(nrm(TAT) * nrm(b), nrm(TT) * nrm(b) * nrm(rho_p), nrm(rhs))
        res["e"] = _rel(nrm(lhs - rhs), size)
        _rounding_gate(res, cond, notes, tol, nrm(W) * (nrm(AX) + nrm(X @ rho_p)), size)
    return IdentityReport(res, tol, cond, notes)


def verify_witness(A, w, tol=1e-8):
    if np.ndim(w.x) == 1:
        return verify_vector_identities(A, w, tol)
    return verify_block_identities(A, w.x, w.v, w.W, w.x_plus, w.alpha_plus, w.b_plus, tol, D=w.d)


def verify_trace(A, trace, tol=1e-8):
    """One report per recorded step (solve with ``keep_steps=True``).  Steps that
    lock columns are skipped for blocks, since the functional changes there."""
    out = []
    for info in trace.steps:
        if info.newly_locked and len(info.active) > 1:
            continue
        try:
            w = witness_from_step(A, info)
        except ValueError:
            continue
        rep = verify_witness(A, w, tol)
        rep.iter = info.iter
        if w.lstsq_residual > 1e-8:
            rep.notes.append(f"step not in span[v, W] (residual {w.lstsq_residual:.2e})")
        out.append(rep)
    return out


# ---------------------------------------------------------------------------
# gradient of tr rho
# ---------------------------------------------------------------------------

def trace_rho(A, X):
    rho, _, _ = _rq_tilde(A, as_block(X))
    return float(np.real(np.trace(rho)))


def trace_rho_directional(A, X, E):
    """2 Re <E, r(X) (X^H X)^{-1/2}> = 2 Re tr(E^H (A X - X rho~) (X^H X)^{-1})."""
    X, E = as_block(X), as_block(E)
    _, r, _ = _rq_tilde(A, X)
    G = np.linalg.solve(X.conj().T @ X, np.eye(X.shape[1]))
    return float(2.0 * np.real(np.sum(E.conj() * (r @ G))))


def gradient_check(A, X, E, h=1e-5):
    """Central difference of tr rho(X + t E) at t = 0 against the analytic slope.
    Returns ``(finite_difference, analytic, relative_error)``."""
    X, E = as_block(X), as_block(E)
    fd = (trace_rho(A, X + h * E) - trace_rho(A, X - h * E)) / (2 * h)
    an = trace_rho_directional(A, X, E)
    return fd, an, abs(fd - an) / max(abs(an), abs(fd), 1e-300)
