"""The LOCG(n_b, m_e, m_h) iteration.

Each step builds the search space

    span{X_k, S_1, ..., S_{m_e}} + span{X_{k-1}, ..., X_{k-m_h}},
    S_1 = K R_k,  S_t = K (A S_{t-1} - S_{t-1} diag(rho_k)),

and takes the n_b smallest Ritz pairs of A on it.  Historical iterates enter
as momentum blocks P_{j+1} = X_{j+1} - X_j Y_j (the part of the new Ritz
block outside X_j), which span the same space as [X_{j+1}, X_j] but whose
images A P are formed without cancellation.  Operator images of every basis
column are carried through Gram-Schmidt, so one step costs exactly
(m_e + 1) applications of A per active column.
"""

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import BreakdownError, RankDeficientError, SubspaceCollapseError
from .linalg import GRAM_COND_MAX, HermitianOperator, RitzDecomposition, as_block
from .rates import block_gamma_first, scalar_sigma_diagnostic

ASYMMETRY_TOL = 1e-8

OUTCOMES = ("converged-by-stagnation", "residual-converged", "max-iter", "breakdown")


@dataclass
class SolverConfig:
    n_b: int = 1
    m_e: int = 1
    m_h: int = 1
    max_iter: int = 1000
    stop_rel: float = 1e-15
    drop_tol: float = 1e-10
    seed: int = 0
    preconditioner: object = None   # None | "identity" | "jacobi" | HermitianOperator
    res_tol: float = 1e-12          # residual lock threshold, relative to ||A||
    diagnostics: bool = True
    keep_steps: bool = False

    def validate(self, n=None):
        if self.n_b < 1 or self.m_e < 1 or self.m_h < 0:
            raise ValueError("need n_b >= 1, m_e >= 1, m_h >= 0")
        if self.stop_rel <= 0:
            raise ValueError("stop_rel must be positive")
        if self.drop_tol <= 0:
            raise ValueError("drop_tol must be positive")
        if n is not None and self.n_b * (self.m_e + 1 + self.m_h) > n:
            raise ValueError("search subspace does not fit: n_b (m_e + 1 + m_h) > n")
        return self

    @property
    def triple(self):
        return (self.n_b, self.m_e, self.m_h)


@dataclass
class SolverState:
    iter: int
    X: np.ndarray
    AX: np.ndarray
    rho: np.ndarray
    R: np.ndarray
    history: list = field(default_factory=list)       # past X blocks, most recent first
    momentum: list = field(default_factory=list)      # (columns, P, AP), most recent first
    res_history: list = field(default_factory=list)   # past R blocks, most recent first
    rho_history: list = field(default_factory=list)   # past rho vectors, most recent first
    locked: dict = field(default_factory=dict)        # column -> (value, reason)
    scale: float = 1.0

    @property
    def active(self):
        return [j for j in range(self.X.shape[1]) if j not in self.locked]

    @property
    def residual_norms(self):
        return np.linalg.norm(self.R, axis=0)


@dataclass
class IterationRecord:
    iter: int
    ritz_values: np.ndarray
    residual_norms: np.ndarray
    errors_rel: Optional[np.ndarray] = None
    errors_abs: Optional[np.ndarray] = None
    gamma: list = field(default_factory=list)
    sigma: float = float("nan")
    subspace_dim: int = 0
    wall_time: float = 0.0
    galerkin: float = 0.0
    newly_locked: list = field(default_factory=list)
    diagnostic: object = None
    step: object = None             # StepInfo when the solve keeps steps


@dataclass
class SearchBasis:
    Z: np.ndarray
    AZ: np.ndarray
    labels: list        # for each column of Z: (kind, t, column) with kind in x|s|p
    n_x: int
    AS1: Optional[np.ndarray] = None   # A S_1 before orthonormalization


@dataclass
class StepInfo:
    """What a verification oracle needs to reconstruct one step."""
    iter: int
    active: list
    X: np.ndarray
    R: np.ndarray
    rho: np.ndarray
    basis: SearchBasis
    Y: np.ndarray
    X_new: np.ndarray
    rho_new: np.ndarray
    preconditioned: bool
    newly_locked: list


@dataclass
class ConvergenceTrace:
    config: SolverConfig
    initial: IterationRecord
    records: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    outcome: str = ""
    breakdown_iter: Optional[int] = None
    message: str = ""
    summary: object = None

    @property
    def iterations(self):
        return len(self.records)

    def all_records(self):
        return [self.initial] + self.records

    def ritz_matrix(self):
        return np.array([r.ritz_values for r in self.all_records()])

    def errors(self, column=0):
        """rho_{k,j} - lambda_j over k = 0..K (needs a reference spectrum)."""
        return np.array([r.errors_abs[column] for r in self.all_records()])

    def sigmas(self):
        return np.array([self.initial.sigma] + [r.sigma for r in self.records])


# ---------------------------------------------------------------------------
# preconditioners
# ---------------------------------------------------------------------------

def make_preconditioner(spec, A):
    """None for the identity, else a HermitianOperator K (positive definite)."""
    if spec is None or (isinstance(spec, str) and spec == "identity"):
        return None
    if isinstance(spec, str):
        if spec != "jacobi":
            raise ValueError(f"unknown preconditioner {spec!r}")
        d = np.abs(np.real(A.diagonal()))
        d[d == 0] = 1.0
        inv = 1.0 / d
        return HermitianOperator(A.n, lambda X: inv[:, None] * X, dense=None,
                                 scale=float(inv.max()), diagonal=inv, name="jacobi")
    if isinstance(spec, HermitianOperator):
        return spec
    if isinstance(spec, np.ndarray):
        return HermitianOperator.from_dense(spec, name="K")
    raise TypeError("preconditioner must be None, 'identity', 'jacobi', an array or an operator")


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

def _search_basis(A, K, state, cfg):
    act = state.active
    locked = sorted(state.locked)
    Xa, AXa = state.X[:, act], state.AX[:, act]
    rho_a = state.rho[act]
    blocks, images, labels = [Xa], [AXa], [("x", 0, j) for j in act]
    S = state.R[:, act]
    if K is not None:
        S = K.apply(S)
    AS1 = None
    for t in range(1, cfg.m_e + 1):
        AS = A.apply(S)
        if t == 1:
            AS1 = AS
        blocks.append(S)
        images.append(AS)
        labels += [("s", t, j) for j in act]
        if t < cfg.m_e:
            S = AS - S * rho_a
            if K is not None:
                S = K.apply(S)
    for depth, (cols, P, AP) in enumerate(state.momentum[:cfg.m_h], start=1):
        sel = [i for i, j in enumerate(cols) if j in act]
        if not sel:
            continue
        blocks.append(P[:, sel])
        images.append(AP[:, sel])
        labels += [("p", depth, cols[i]) for i in sel]
    B = np.hstack(blocks)
    AB = np.hstack(images)
    Q0 = state.X[:, locked] if locked else None
    AQ0 = state.AX[:, locked] if locked else None
    Z, AZ, kept = _kernels.mgs(B, AB, Q0, AQ0, drop_tol=cfg.drop_tol)
    if Z.shape[1] < len(act):
        raise SubspaceCollapseError("subspace collapse: basis smaller than the active block")
    zl = [lab for lab, k in zip(labels, kept) if k]
    n_x = sum(1 for lab in zl if lab[0] == "x")
    if n_x != len(act):
        raise SubspaceCollapseError("subspace collapse: current iterate lost during orthonormalization")
    return SearchBasis(Z, AZ, zl, n_x, AS1)


def build_search_subspace(A, K, state, cfg):
    """Orthonormal basis Z of the step's search subspace and its rank."""
    if not any(np.linalg.norm(state.R[:, j]) > 0 for j in state.active):
        raise SubspaceCollapseError("subspace collapse: all active residuals vanish")
    basis = _search_basis(A, K, state, cfg)
    return basis.Z, basis.Z.shape[1]


def rayleigh_ritz(A, Z, n_b, AZ=None):
    """The n_b smallest Ritz pairs of A on range(Z) (Z orthonormal)."""
    Z = as_block(Z)
    if Z.shape[1] < n_b:
        raise ValueError("basis has fewer columns than requested Ritz pairs")
    if AZ is None:
        AZ = A.apply(Z)
    G = Z.conj().T @ AZ
    gscale = np.max(np.abs(G))
    asym = np.max(np.abs(G - G.conj().T))
    if not np.isfinite(gscale) or asym > ASYMMETRY_TOL * max(gscale, np.finfo(float).tiny):
        raise BreakdownError(f"nonreal Ritz values: projected matrix asymmetry {asym:.3e}")
    G = 0.5 * (G + G.conj().T)
    w, V = scipy.linalg.eigh(G)
    order = np.lexsort((np.arange(w.size), w))[:n_b]
    return RitzDecomposition(w[order], Z @ V[:, order]), V[:, order], w


def _align(old, new):
    """Unit-modulus column factors making old_j^H new_j real and non-negative."""
    c = np.einsum("ij,ij->j", old.conj(), new)
    f = np.ones(c.shape, dtype=np.result_type(c, 1.0))
    nz = np.abs(c) > 0
    f[nz] = np.abs(c[nz]) / c[nz]
    if np.isrealobj(new):
        f = np.real(f)
    return f


def locg_step(A, K, state, cfg, reference=None, it_rho0=None):
    """Advance one iteration; returns ``(new_state, record)``.

    ``K`` is None (identity) or a HermitianOperator.  With ``cfg.keep_steps``
    the record carries a StepInfo for the verification oracle.
    """
    t0 = time.perf_counter()
    pre = [j for j in state.active
           if np.linalg.norm(state.R[:, j]) <= cfg.res_tol * state.scale]
    if pre:
        # already converged columns are frozen before they feed noise into the basis
        state = replace(state, locked={**state.locked, **{j: (state.rho[j], "residual") for j in pre}})
        if not state.active:
            new = replace(state, iter=state.iter + 1)
            rec = IterationRecord(new.iter, new.rho.copy(), new.residual_norms, newly_locked=pre,
                                  sigma=0.0 if cfg.m_h == 0 else float("nan"))
            if reference is not None:
                _attach_errors(rec, reference, it_rho0)
            rec.wall_time = time.perf_counter() - t0
            return new, rec
    act = state.active
    nact = len(act)
    basis = _search_basis(A, K, state, cfg)
    ritz, Y, theta = rayleigh_ritz(A, basis.Z, nact, AZ=basis.AZ)
    f = _align(state.X[:, act], ritz.vectors)
    Xn = ritz.vectors * f
    Y = Y * f
    AXn = A.apply(Xn)
    Gx = Xn.conj().T @ AXn
    Gx = 0.5 * (Gx + Gx.conj().T)
    rho_a = np.real(np.diag(Gx)).copy()
    Rn = AXn - Xn @ Gx
    galerkin = float(np.max(np.abs(basis.Z.conj().T @ Rn))) if Rn.size else 0.0

    scale = max(state.scale, float(np.max(np.abs(theta))))
    X = state.X.copy()
    AX = state.AX.copy()
    R = state.R.copy()
    rho = state.rho.copy()
    X[:, act], AX[:, act], R[:, act], rho[act] = Xn, AXn, Rn, rho_a

    # momentum: the part of the new block outside the old iterate
    rest = slice(basis.n_x, None)
    P = basis.Z[:, rest] @ Y[rest]
    AP = basis.AZ[:, rest] @ Y[rest]
    momentum = ([(list(act), P, AP)] + state.momentum)[:cfg.m_h] if cfg.m_h else []

    locked = dict(state.locked)
    newly = []
    rn = np.linalg.norm(R, axis=0)
    for i, j in enumerate(act):
        dec = state.rho[j] - rho[j]
        if rn[j] <= cfg.res_tol * scale:
            locked[j] = (rho[j], "residual")
            newly.append(j)
        elif dec < cfg.stop_rel * abs(rho[j]):
            locked[j] = (rho[j], "stagnation")
            newly.append(j)

    new = SolverState(
        iter=state.iter + 1, X=X, AX=AX, rho=rho, R=R,
        history=([state.X] + state.history)[:cfg.m_h] if cfg.m_h else [],
        momentum=momentum,
        res_history=([state.R] + state.res_history)[:max(cfg.m_h, 1)],
        rho_history=([state.rho] + state.rho_history)[:max(cfg.m_h, 1)],
        locked=locked, scale=scale)

    rec = IterationRecord(new.iter, rho.copy(), rn, subspace_dim=basis.Z.shape[1],
                          galerkin=galerkin, newly_locked=pre + newly)
    if reference is not None:
        _attach_errors(rec, reference, it_rho0)
    if cfg.diagnostics:
        try:
            diag = _sigma_diagnostic(A, K, state, new, basis, Y, cfg)
        except (ZeroDivisionError, np.linalg.LinAlgError):
            diag = None
        if diag is not None:
            rec.diagnostic = diag
            rec.gamma = list(diag.gammas)
            rec.sigma = diag.sigma
    if cfg.m_h == 0:
        rec.sigma = 0.0
    rec.wall_time = time.perf_counter() - t0
    if cfg.keep_steps:
        rec.step = StepInfo(state.iter, list(act), state.X[:, act].copy(), state.R[:, act].copy(),
                            state.rho[act].copy(), basis, Y, Xn, rho_a, K is not None, newly)
    return new, rec


def _attach_errors(rec, reference, rho0):
    targets = np.array([reference.target(j) for j in range(rec.ritz_values.size)])
    rec.errors_abs = rec.ritz_values - targets
    if rho0 is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            rec.errors_rel = rec.errors_abs / (rho0 - targets)


def _sigma_diagnostic(A, K, old, new, basis, Y, cfg):
    """sigma for the step old -> new (None when the variant is not covered)."""
    if cfg.m_h == 0 or K is not None:
        return None
    nb = cfg.n_b
    if nb == 1:
        if old.locked:
            return None
        past = [R[:, 0] for R in old.res_history[:cfg.m_h]]
        residuals = past[::-1] + [old.R[:, 0]]
        if np.linalg.norm(old.R[:, 0]) == 0:
            return None
        q = None
        if cfg.m_e > 1:
            q = _extended_direction(basis, Y[:, 0], old.R[:, 0])
            if q is None:
                return None
        return scalar_sigma_diagnostic(old.iter, residuals, q)
    act = old.active
    if cfg.m_e == 1 and cfg.m_h == 1 and old.history and len(act) >= 2 and act[0] == 0:
        # with K = I, S_1 = R_k over the active columns, so A R_k is already at hand
        return block_gamma_first(A, old.X[:, act], old.history[0][:, act], old.R[:, act], old.rho[act],
                                 old.rho_history[0][act], new.rho[0], AR=basis.AS1, it=old.iter)
    return None


def _extended_direction(basis, y, r):
    """q_k = r_k + (I-P_k)(I-Q_k) W_k c, the Krylov part of the step scaled so
    that its r_k coefficient is one."""
    lab = basis.labels
    ix = [i for i, l in enumerate(lab) if l[0] == "x"]
    i1 = [i for i, l in enumerate(lab) if l[0] == "s" and l[1] == 1]
    ie = [i for i, l in enumerate(lab) if l[0] == "s" and l[1] > 1]
    if len(ix) != 1 or len(i1) != 1:
        return None
    yx = y[ix[0]]
    z1 = basis.Z[:, i1[0]]
    r_coef = np.vdot(z1, r)          # r = r_coef * z1 (r is orthogonal to x)
    alpha = y[i1[0]] / (yx * r_coef)
    if alpha == 0:
        return None
    ext = basis.Z[:, ie] @ y[ie] / (yx * alpha) if ie else 0.0
    return r + ext


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def initial_state(A, X0, cfg, count_setup=True):
    X0 = as_block(X0)
    if X0.shape[0] != A.n:
        raise ValueError("start block has the wrong number of rows")
    if X0.shape[1] != cfg.n_b:
        raise ValueError(f"start block must have n_b = {cfg.n_b} columns")
    G = X0.conj().T @ X0
    w = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    if w[0] <= 0 or w[-1] > GRAM_COND_MAX * w[0]:
        raise RankDeficientError("start block is rank deficient")
    dt = np.result_type(X0, A.dtype)
    X0 = X0.astype(dt)
    AX0 = A.apply(X0)
    Q, AQ, kept = _kernels.mgs(X0, AX0, drop_tol=1e-14)
    if Q.shape[1] < cfg.n_b:
        raise RankDeficientError("start block is rank deficient")
    H = Q.conj().T @ AQ
    w, V = scipy.linalg.eigh(0.5 * (H + H.conj().T))
    X, AX = Q @ V, AQ @ V
    # columns of the start keep their orientation
    f = _align(X0, X)
    X, AX = X * f, AX * f
    rho = np.real(w).copy()
    R = AX - X * rho
    scale = A.scale if A.scale else float(np.max(np.abs(rho)))
    return SolverState(iter=0, X=X, AX=AX, rho=rho, R=R, scale=scale)


def locg_solve(A, K, X0, cfg, reference=None):
    """Run LOCG(n_b, m_e, m_h) from X0.  Returns ``(state, trace, outcome)``.

    ``K`` is a preconditioner spec (see ``make_preconditioner``); when None,
    ``cfg.preconditioner`` is used.  ``reference`` is a SpectralSummary used
    to record errors against the exact eigenvalues.
    """
    cfg.validate(A.n)
    Kop = make_preconditioner(K if K is not None else cfg.preconditioner, A)
    state = initial_state(A, X0, cfg)
    rn = state.residual_norms
    init = IterationRecord(0, state.rho.copy(), rn, sigma=0.0 if cfg.m_h == 0 else 1.0)
    rho0 = state.rho.copy()
    if reference is not None:
        _attach_errors(init, reference, rho0)
    trace = ConvergenceTrace(cfg, init, summary=reference)

    for j in range(cfg.n_b):
        if rn[j] <= cfg.res_tol * state.scale:
            state.locked[j] = (state.rho[j], "residual")
    if len(state.locked) == cfg.n_b:
        trace.outcome = "residual-converged"
        return state, trace, trace.outcome

    while state.iter < cfg.max_iter:
        try:
            state, rec = locg_step(A, Kop, state, cfg, reference, rho0)
        except (BreakdownError, SubspaceCollapseError) as exc:
            trace.outcome = "breakdown"
            trace.breakdown_iter = state.iter
            trace.message = str(exc)
            return state, trace, trace.outcome
        trace.records.append(rec)
        if rec.step is not None:
            trace.steps.append(rec.step)
        if len(state.locked) == cfg.n_b:
            reasons = {r for _, r in state.locked.values()}
            trace.outcome = "residual-converged" if reasons == {"residual"} else "converged-by-stagnation"
            return state, trace, trace.outcome
    trace.outcome = "max-iter"
    return state, trace, trace.outcome


# ---------------------------------------------------------------------------
# preconditioning as a change of variables
# ---------------------------------------------------------------------------

def hpd_sqrt(K):
    """K^{1/2} and K^{-1/2} of a dense Hermitian positive definite matrix."""
    K = np.asarray(K)
    w, V = scipy.linalg.eigh(0.5 * (K + K.conj().T))
    if w[0] <= 0:
        raise ValueError("preconditioner must be positive definite")
    s = np.sqrt(w)
    return (V * s) @ V.conj().T, (V / s) @ V.conj().T


def pencil_first_ritz(Ahat, Kmat, z0, n_b=1):
    """Smallest Ritz values after one plain step for the pencil (Ahat, Kmat).

    From z the step searches span{z, Ahat z - Kmat z rho} with
    rho = (z^H Kmat z)^{-1} z^H Ahat z, and solves the projected pencil.
    """
    Z = as_block(z0)
    G = Z.conj().T @ Kmat @ Z
    rho = np.linalg.solve(G, Z.conj().T @ Ahat @ Z)
    R = Ahat @ Z - Kmat @ Z @ rho
    B = np.hstack([Z, R])
    Q, _, _ = _kernels.mgs(B, drop_tol=1e-12)
    a = Q.conj().T @ Ahat @ Q
    m = Q.conj().T @ Kmat @ Q
    w = scipy.linalg.eigh(0.5 * (a + a.conj().T), 0.5 * (m + m.conj().T), eigvals_only=True)
    return w[:n_b]


def preconditioned_first_ritz(A, K, x0, n_b=1):
    """Smallest Ritz values after one K-preconditioned LOCG(n_b, 1, 0) step on A."""
    cfg = SolverConfig(n_b=n_b, m_e=1, m_h=0, diagnostics=False)
    Kop = make_preconditioner(K, A)
    state = initial_state(A, x0, cfg)
    new, _ = locg_step(A, Kop, state, cfg)
    return np.sort(new.rho)


def preconditioner_equivalence(A, K, x0, n_b=1):
    """Compare one K-preconditioned step on A from x0 with one plain step on the
    pencil (K^{1/2} A K^{1/2}, K) from z0 = K^{-1/2} x0.  Returns both value
    arrays and the largest relative difference."""
    Ad = A.to_dense()
    Kd = K.to_dense() if isinstance(K, HermitianOperator) else np.asarray(K)
    Kh, Kih = hpd_sqrt(Kd)
    lhs = preconditioned_first_ritz(A, HermitianOperator.from_dense(Kd, check=False), x0, n_b)
    rhs = pencil_first_ritz(Kh @ Ad @ Kh, Kd, Kih @ as_block(x0), n_b)
    diff = np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), np.finfo(float).tiny))
    return lhs, rhs, float(diff)
