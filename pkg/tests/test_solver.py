import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locg import (CountingOperator, HermitianOperator, SolverConfig, build_search_subspace,
                  dense_eigh, laplacian2d, locg_solve, locg_step, outlier_cluster,
                  rayleigh_ritz, start_block)
from locg.errors import BreakdownError, RankDeficientError, SubspaceCollapseError
from locg.problems import haar_orthonormal
from locg.solver import initial_state, make_preconditioner, preconditioner_equivalence

from conftest import random_symmetric

STANDARD_TRIPLES = ([(1, me, mh) for me in (1, 2, 3) for mh in (0, 1, 2)]
                 + [(nb, 1, mh) for nb in (2, 3) for mh in (0, 1)])


def diag_op(values):
    return HermitianOperator.from_dense(np.diag(np.asarray(values, dtype=float)))


def in_range(Z, V, tol=1e-12):
    return np.abs(Z @ (Z.T @ V) - V).max() <= tol * max(1.0, np.abs(V).max())


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(n_b=0).validate()
    with pytest.raises(ValueError):
        SolverConfig(stop_rel=0).validate()
    with pytest.raises(ValueError):
        SolverConfig(n_b=3, m_e=3, m_h=2).validate(n=10)
    assert SolverConfig(1, 1, 0).validate(n=2).triple == (1, 1, 0)


def test_search_subspace_plain():
    A = random_symmetric(20, 3)
    st_ = initial_state(A, start_block(20, 1, 0), SolverConfig(1, 1, 0))
    Z, rank = build_search_subspace(A, None, st_, SolverConfig(1, 1, 0))
    assert rank == 2
    assert in_range(Z, st_.X) and in_range(Z, st_.R)


def test_search_subspace_krylov_rank():
    A = random_symmetric(20, 4)
    cfg = SolverConfig(1, 2, 0)
    st_ = initial_state(A, start_block(20, 1, 1), cfg)
    Z, rank = build_search_subspace(A, None, st_, cfg)
    x = st_.X[:, 0]
    ref = np.linalg.matrix_rank(np.column_stack([x, A(x), A(A(x))]))
    assert rank == ref == 3
    assert in_range(Z, A.to_dense() @ st_.R, tol=1e-10)


def test_search_subspace_first_iteration_has_no_history():
    A = random_symmetric(20, 5)
    cfg = SolverConfig(1, 1, 2)
    st_ = initial_state(A, start_block(20, 1, 2), cfg)
    assert build_search_subspace(A, None, st_, cfg)[1] == 2


def test_search_subspace_collapse():
    A = diag_op(range(1, 6))
    cfg = SolverConfig(1, 1, 1)
    st_ = initial_state(A, np.eye(5)[:, :1], cfg)
    with pytest.raises(SubspaceCollapseError):
        build_search_subspace(A, None, st_, cfg)


def test_rayleigh_ritz_examples():
    A, s = outlier_cluster(0, n=60)
    w, V = dense_eigh(A.to_dense())
    ritz, _, _ = rayleigh_ritz(A, np.eye(60), 3)
    assert np.allclose(ritz.values, w[:3], atol=1e-12)
    Z = np.linalg.qr(np.column_stack([V[:, 0], haar_orthonormal(60, 1, 3)]))[0]
    assert abs(rayleigh_ritz(A, Z, 1)[0].values[0] - w[0]) <= 1e-12
    Z = haar_orthonormal(60, 7, 4)
    ref = np.linalg.eigvalsh(Z.T @ A.to_dense() @ Z)[:2]
    assert np.allclose(rayleigh_ritz(A, Z, 2)[0].values, ref, atol=1e-12)
    with pytest.raises(ValueError):
        rayleigh_ritz(A, Z[:, :1], 2)


def test_rayleigh_ritz_nonreal_breakdown():
    M = np.diag([1.0, 2.0, 3.0])
    M[0, 1] = 0.5                       # not symmetric
    A = HermitianOperator(3, lambda X: M @ X)
    with pytest.raises(BreakdownError):
        rayleigh_ritz(A, np.eye(3), 1)


def test_step_on_exact_eigenvectors_is_stationary():
    A = diag_op(range(1, 8))
    cfg = SolverConfig(2, 1, 1)
    st0 = initial_state(A, np.eye(7)[:, [1, 4]], cfg)
    st1, rec = locg_step(A, None, st0, cfg)
    assert np.array_equal(st1.X, st0.X)
    assert rec.residual_norms.max() <= 1e-12
    assert sorted(rec.newly_locked) == [0, 1]


def test_sd_step_matches_closed_form():
    A = diag_op([1.0, 2.0, 3.0])
    x = np.array([0.6, 0.5, 0.4])
    x = x / np.linalg.norm(x)
    cfg = SolverConfig(1, 1, 0)
    st0 = initial_state(A, x, cfg)
    st1, _ = locg_step(A, None, st0, cfg)
    # hand oracle: 2 x 2 matrix in the basis {x, r/|r|}
    rho = x @ A(x)
    r = A(x) - rho * x
    q = r / np.linalg.norm(r)
    a, b, d = rho, np.linalg.norm(r), q @ A(q)
    theta = (a + d) / 2 - np.sqrt(((a - d) / 2) ** 2 + b * b)
    assert st1.rho[0] == pytest.approx(theta, abs=1e-14)


def test_locg111_step_coefficients():
    """x_{k+1} = x_k + alpha r_k + beta (I-P_k) x_{k-1} with the closed-form alpha, beta."""
    A, _ = outlier_cluster(0, n=80)
    cfg = SolverConfig(1, 1, 1, diagnostics=False)
    s0 = initial_state(A, start_block(80, 1, 3), cfg)
    s1, _ = locg_step(A, None, s0, cfg)
    s2, _ = locg_step(A, None, s1, cfg)
    u_prev, x = s0.X[:, 0], s1.X[:, 0]
    x_prev = u_prev * (u_prev @ x)          # so that x = x_prev + d_prev with x_prev^T d_prev = 0
    x_next = s2.X[:, 0] / (x @ s2.X[:, 0])
    r = A(x) - (x @ A(x)) * x
    p = x_prev - x * (x @ x_prev)
    coef = np.linalg.lstsq(np.column_stack([r, p]), x_next - x, rcond=None)[0]
    rho_prev, rho, rho_next = (v @ A(v) / (v @ v) for v in (u_prev, x, x_next))
    delta, delta_m = rho - rho_next, rho_prev - rho
    sin2 = 1 - (u_prev @ x) ** 2
    alpha = delta / (-(r @ r))
    beta = -delta / (delta_m + delta * sin2)
    assert coef[0] == pytest.approx(alpha, rel=1e-8)
    assert coef[1] == pytest.approx(beta, rel=1e-8)


def test_solve_diag_from_eigenvector():
    A = diag_op(range(1, 11))
    _, trace, out = locg_solve(A, None, np.eye(10)[:, :1], SolverConfig(1, 1, 1, max_iter=30))
    assert out == "residual-converged" and trace.iterations == 0
    assert abs(trace.initial.ritz_values[0] - 1) <= 1e-12


def test_solve_diag_generic_start():
    A = diag_op(range(1, 11))
    x0 = np.ones(10) / np.sqrt(10)
    st_, trace, out = locg_solve(A, None, x0, SolverConfig(1, 1, 1, max_iter=30))
    assert out in ("converged-by-stagnation", "residual-converged")
    assert trace.iterations <= 30 and abs(st_.rho[0] - 1) <= 1e-12


def test_outlier_cluster_reaches_1e10_within_150():
    A, s = outlier_cluster(0)
    _, trace, out = locg_solve(A, None, start_block(A.n, 1, 0), SolverConfig(1, 1, 1, max_iter=150),
                               reference=s)
    errs = [r.errors_rel[0] for r in trace.all_records()]
    assert min(errs) <= 1e-10
    assert out != "breakdown"


def test_rank_deficient_start_rejected():
    A = random_symmetric(8)
    x = np.ones((8, 1))
    with pytest.raises(RankDeficientError):
        locg_solve(A, None, np.hstack([x, x]), SolverConfig(2, 1, 0))
    with pytest.raises(ValueError):
        locg_solve(A, None, np.ones((8, 3)), SolverConfig(2, 1, 0))


def _check_run_invariants(A, trace, state, cfg):
    recs = trace.all_records()
    for prev, cur in zip(recs, recs[1:]):
        assert np.all(cur.ritz_values <= prev.ritz_values + 1e-13 * np.abs(prev.ritz_values))
        assert cur.galerkin <= 1e-10 * A.scale
        assert np.all(np.diff(cur.ritz_values) >= -1e-8 * A.scale)
        if cfg.n_b == 1 and cfg.m_h >= 1 and np.isfinite(cur.sigma):
            assert cur.sigma >= 1 - 1e-12
    X, R = state.X, state.R
    assert np.abs(X.T @ X - np.eye(X.shape[1])).max() <= 1e-12
    # locked columns keep the residual they had when frozen, so x_l^H r_a = r_l^H x_a
    # need not vanish; within each column and within the active block it does
    assert np.abs(np.einsum("ij,ij->j", X, R)).max() <= 1e-10 * A.scale
    act = state.active
    if act:
        assert np.abs(X[:, act].T @ R[:, act]).max() <= 1e-10 * A.scale


@settings(max_examples=15, deadline=None)
@given(triple=st.sampled_from(STANDARD_TRIPLES), seed=st.integers(0, 1000))
def test_run_invariants_random_problem(triple, seed):
    nb, me, mh = triple
    A = random_symmetric(40, seed)
    cfg = SolverConfig(nb, me, mh, max_iter=200)
    state, trace, out = locg_solve(A, None, start_block(40, nb, seed), cfg)
    assert out != "breakdown"
    _check_run_invariants(A, trace, state, cfg)


@pytest.mark.parametrize("triple", STANDARD_TRIPLES)
def test_cost_contract(triple):
    nb, me, mh = triple
    A0, _ = laplacian2d(12)
    A = CountingOperator(A0)
    cfg = SolverConfig(nb, me, mh, max_iter=10)
    st_ = initial_state(A, start_block(A.n, nb, 0), cfg)
    for _ in range(6):
        before = A.count
        st_, _ = locg_step(A, None, st_, cfg)
        assert not st_.locked
        assert A.count - before == (me + 1) * nb


def test_cost_with_locking_counts_active_columns():
    A = CountingOperator(diag_op(np.arange(1.0, 31.0)))
    X0 = np.linalg.qr(np.column_stack([np.eye(30)[:, 0], np.ones(30)]))[0]
    cfg = SolverConfig(2, 1, 1)
    st_ = initial_state(A, X0, cfg)
    before = A.count
    st_, _ = locg_step(A, None, st_, cfg)
    assert 0 in st_.locked
    assert A.count - before == 2 * 1


def test_subspace_growth_dominance():
    A, _ = outlier_cluster(1, n=100)
    x0 = start_block(100, 1, 5)
    one = {}
    for key, cfg in {"110": SolverConfig(1, 1, 0), "120": SolverConfig(1, 2, 0),
                     "111": SolverConfig(1, 1, 1)}.items():
        s = initial_state(A, x0, cfg)
        s1, _ = locg_step(A, None, s, cfg)
        s2, _ = locg_step(A, None, s1, cfg)
        one[key] = (s1.rho[0], s2.rho[0])
    assert one["120"][0] <= one["110"][0]
    assert one["111"][0] == pytest.approx(one["110"][0], rel=1e-14)
    assert one["111"][1] <= one["110"][1]


def test_sign_alignment():
    A, _ = outlier_cluster(0, n=100)
    cfg = SolverConfig(2, 1, 1, keep_steps=True)
    _, trace, _ = locg_solve(A, None, start_block(100, 2, 1), cfg)
    for info in trace.steps:
        assert np.all(np.einsum("ij,ij->j", info.X, info.X_new) > 0)


def test_locking_freezes_columns():
    A = diag_op(np.concatenate(([1.0, 1.5], np.linspace(10, 20, 38))))
    cfg = SolverConfig(3, 1, 1, max_iter=500)
    state, trace, out = locg_solve(A, None, start_block(40, 3, 0), cfg)
    assert out in ("converged-by-stagnation", "residual-converged")
    locked_at = {}
    for r in trace.records:
        for j in r.newly_locked:
            locked_at[j] = r.iter
    for j, k in locked_at.items():
        vals = [r.ritz_values[j] for r in trace.records if r.iter >= k]
        assert len(set(vals)) == 1


def test_jacobi_and_user_preconditioner():
    A, s = outlier_cluster(2, n=200)
    K = make_preconditioner("jacobi", A)
    assert np.allclose(K.diagonal() * np.abs(A.diagonal()), 1.0)
    st_, _, out = locg_solve(A, "jacobi", start_block(200, 1, 0), SolverConfig(1, 1, 1, max_iter=500))
    assert out != "breakdown" and abs(st_.rho[0] - s.lambda_1) <= 1e-10
    Kd = np.diag(np.linspace(0.5, 2.0, 200))
    st_, _, out = locg_solve(A, Kd, start_block(200, 1, 0), SolverConfig(1, 1, 1, max_iter=500))
    assert abs(st_.rho[0] - s.lambda_1) <= 1e-10
    with pytest.raises(ValueError):
        make_preconditioner("ilu", A)


def test_preconditioner_equivalence_pencil():
    A, _ = outlier_cluster(3, n=100)
    K = make_preconditioner("jacobi", A)
    for nb in (1, 2):
        lhs, rhs, diff = preconditioner_equivalence(A, K, start_block(100, nb, 0), nb)
        assert diff <= 1e-8


def test_complex_hermitian_path():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
    A = HermitianOperator.from_dense(0.5 * (M + M.conj().T))
    w = np.linalg.eigvalsh(A.to_dense())
    X0 = rng.standard_normal((30, 1)) + 1j * rng.standard_normal((30, 1))
    st_, _, out = locg_solve(A, None, X0 / np.linalg.norm(X0), SolverConfig(1, 2, 1, max_iter=300))
    assert out != "breakdown" and abs(st_.rho[0] - w[0]) <= 1e-10 * np.abs(w).max()


def test_breakdown_outcome():
    n = 12
    rng = np.random.default_rng(0)
    M = np.diag(np.arange(1.0, n + 1))
    calls = {"n": 0}

    def apply(X):
        calls["n"] += 1
        out = M @ X
        if calls["n"] > 4:              # corrupt the operator mid-run
            out = out + 0.3 * np.roll(X, 1, axis=0)
        return out

    A = HermitianOperator(n, apply, scale=12.0)
    _, trace, out = locg_solve(A, None, rng.standard_normal((n, 1)), SolverConfig(1, 1, 1, max_iter=50))
    assert out == "breakdown" and trace.breakdown_iter is not None
    assert "nonreal" in trace.message or "collapse" in trace.message


def test_errors_recorded_against_reference():
    A, s = laplacian2d(8)
    _, trace, _ = locg_solve(A, None, start_block(64, 2, 0), SolverConfig(2, 1, 1, max_iter=400),
                             reference=s)
    assert trace.initial.errors_rel.tolist() == [1.0, 1.0]
    assert trace.records[-1].errors_rel[0] <= 1e-10
    assert trace.errors(0)[0] == pytest.approx(trace.initial.ritz_values[0] - s.lambda_1)
