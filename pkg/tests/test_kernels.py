import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locg import _kernels
from locg.problems import laplacian2d_sparse

needs_numba = pytest.mark.skipif(_kernels.stencil5_numba is None, reason="numba missing")


def test_stencil_first_unit_vector_n2():
    e1 = np.zeros((4, 1))
    e1[0] = 1
    out = _kernels.stencil5_numpy(e1, 2)[:, 0]
    assert out.tolist() == [-4.0, 1.0, 1.0, 0.0]


@pytest.mark.parametrize("N", [2, 3, 7, 12])
def test_stencil_matches_sparse_matrix(N, rng):
    U = rng.standard_normal((N * N, 3))
    ref = laplacian2d_sparse(N) @ U
    assert np.allclose(_kernels.stencil5_numpy(U, N), ref, atol=1e-13)
    if _kernels.stencil5_numba is not None:
        assert np.allclose(_kernels.stencil5_numba(np.ascontiguousarray(U), N), ref, atol=1e-13)


@needs_numba
@settings(max_examples=25, deadline=None)
@given(n=st.integers(5, 40), m=st.integers(1, 6), q0=st.integers(0, 3), seed=st.integers(0, 10**6))
def test_mgs_backends_agree(n, m, q0, seed):
    rng = np.random.default_rng(seed)
    m = min(m, n - q0)
    B = rng.standard_normal((n, m))
    M = rng.standard_normal((n, n))
    M = M + M.T
    Q0 = np.linalg.qr(rng.standard_normal((n, q0)))[0] if q0 else np.empty((n, 0))
    args = (B, M @ B, Q0, M @ Q0, 1e-10, True)
    Qa, AQa, ka = _kernels.mgs_numpy(*args)
    Qb, AQb, kb = _kernels.mgs_numba(*args)
    assert np.array_equal(ka, kb)
    assert np.allclose(Qa, Qb, atol=1e-12)
    assert np.allclose(AQa, AQb, atol=1e-10)


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_mgs_image_replay(backend, rng):
    if backend == "numba" and _kernels.mgs_numba is None:
        pytest.skip("numba missing")
    impl = _kernels.mgs_numpy if backend == "numpy" else _kernels.mgs_numba
    n = 60
    M = rng.standard_normal((n, n))
    M = M + M.T
    B = rng.standard_normal((n, 5))
    B = np.hstack([B, B[:, :1] * 3.0])        # dependent column is dropped
    Q, AQ, kept = impl(B, M @ B, np.empty((n, 0)), np.empty((n, 0)), 1e-10, True)
    assert kept.tolist() == [True] * 5 + [False]
    assert np.abs(Q.T @ Q - np.eye(5)).max() < 1e-14
    assert np.abs(AQ - M @ Q).max() < 1e-12


def test_mgs_complex_path(rng):
    n = 30
    B = rng.standard_normal((n, 4)) + 1j * rng.standard_normal((n, 4))
    Q, _, kept = _kernels.mgs(B)
    assert kept.all()
    assert np.abs(Q.conj().T @ Q - np.eye(4)).max() < 1e-14


def test_dispatch_respects_flag(monkeypatch, rng):
    U = rng.standard_normal((25, 2))
    monkeypatch.setattr(_kernels, "USE_NUMBA", False)
    a = _kernels.stencil5(U, 5)
    monkeypatch.setattr(_kernels, "USE_NUMBA", _kernels.stencil5_numba is not None)
    b = _kernels.stencil5(U, 5)
    assert np.allclose(a, b, atol=1e-15)


def test_env_flag_parsing(monkeypatch):
    for v in ("0", "false", "No", "off"):
        monkeypatch.setenv("LOCG_NUMBA", v)
        assert not _kernels._env_wants_numba()
    monkeypatch.setenv("LOCG_NUMBA", "1")
    assert _kernels._env_wants_numba()
