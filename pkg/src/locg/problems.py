"""Test problems, Haar-random blocks and Matrix Market ingestion.

Random numbers come from numpy's PCG64 bit generator (``default_rng(seed)``),
so a seed reproduces the same operator and start block on every platform.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse

from . import _kernels
from .errors import MatrixMarketError
from .linalg import HermitianOperator
from .reference import laplacian2d_spectrum, spectral_summary

PROBLEM_KINDS = ("laplacian2d", "cluster_outlier", "outlier_cluster", "matrix-file")


@dataclass
class ProblemSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "laplacian2d" and self.params.get("N", 2) < 2:
            raise ValueError("laplacian2d needs N >= 2")
        if self.kind in ("cluster_outlier", "outlier_cluster") and self.params.get("n", 1000) < 10:
            raise ValueError("synthetic problems need n >= 10")

    def label(self):
        if self.kind == "laplacian2d":
            return f"laplacian2d_N{self.params.get('N', 50)}"
        if self.kind == "matrix-file":
            return "matrix_file"
        return f"{self.kind}_n{self.params.get('n', 1000)}"

    def build(self):
        """Return ``(operator, SpectralSummary or None)``."""
        p = self.params
        if self.kind == "laplacian2d":
            return laplacian2d(p.get("N", 50))
        if self.kind == "cluster_outlier":
            return cluster_outlier(p.get("seed", 0), n=p.get("n", 1000))
        if self.kind == "outlier_cluster":
            return outlier_cluster(p.get("seed", 0), n=p.get("n", 1000))
        A = load_matrix_market(p["path"])
        summary = None
        if A.n <= 4000:
            from .reference import dense_eigh
            summary = spectral_summary(dense_eigh(A.to_dense())[0])
        return A, summary


def laplacian2d(N):
    """Five-point Dirichlet Laplacian on an N x N grid (n = N^2), matrix-free."""
    if N < 2:
        raise ValueError("N must be at least 2")
    n = N * N
    op = HermitianOperator(n, lambda X: _kernels.stencil5(np.asarray(X, dtype=float), N),
                           scale=8.0, diagonal=np.full(n, -4.0), name=f"laplacian2d({N})")
    return op, spectral_summary(laplacian2d_spectrum(N))


def laplacian2d_sparse(N):
    T = scipy.sparse.diags([1.0, 1.0], [-1, 1], shape=(N, N))
    I = scipy.sparse.identity(N)
    return (scipy.sparse.kron(I, T) + scipy.sparse.kron(T, I) - 4.0 * scipy.sparse.identity(N * N)).tocsr()


def haar_orthonormal(n, k, seed):
    """n x k block with orthonormal columns, Haar distributed on the Stiefel manifold."""
    if k > n:
        raise ValueError("k must not exceed n")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, k))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))


def haar_special_orthogonal(n, seed):
    Q = haar_orthonormal(n, n, seed)
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def start_block(n, n_b, seed):
    """Starting block: first n_b columns of an n x 3 Haar block (shared across n_b)."""
    return haar_orthonormal(n, max(3, n_b), seed)[:, :n_b].copy()


def cluster_outlier_spectrum(n=1000):
    # -1, then 0, 0.001, ..., then 2^6..2^9
    return np.concatenate(([-1.0], np.arange(n - 5) / 1000.0, 2.0 ** np.arange(6, 10)))


def outlier_cluster_spectrum(n=1000):
    # 1, then 1.1, 1.101, ...
    return np.concatenate(([1.0], 1.1 + np.arange(n - 1) / 1000.0))


def _conjugated(lam, seed, name):
    n = lam.size
    Q = haar_special_orthogonal(n, seed)
    A = (Q * lam) @ Q.T
    A = 0.5 * (A + A.T)
    return HermitianOperator.from_dense(A, name=name, check=False), spectral_summary(lam)


def cluster_outlier(seed=0, n=1000):
    if n < 10:
        raise ValueError("n must be at least 10")
    return _conjugated(cluster_outlier_spectrum(n), seed, f"cluster_outlier(n={n})")


def outlier_cluster(seed=0, n=1000):
    if n < 10:
        raise ValueError("n must be at least 10")
    return _conjugated(outlier_cluster_spectrum(n), seed, f"outlier_cluster(n={n})")


def load_matrix_market(path):
    """Read a symmetric/Hermitian Matrix Market file (coordinate or array)."""
    try:
        rows, cols, _, fmt, fld, symm = scipy.io.mminfo(path)
        M = scipy.io.mmread(path)
    except (OSError, ValueError, IndexError, TypeError) as exc:
        raise MatrixMarketError(f"cannot parse Matrix Market file {path}: {exc}") from exc
    if rows != cols:
        raise MatrixMarketError(f"matrix is not square ({rows} x {cols})")
    if fld == "pattern":
        raise MatrixMarketError("pattern matrices carry no values")
    if fld == "complex" and symm == "symmetric":
        raise MatrixMarketError("complex symmetric (non-Hermitian) matrices are not supported")
    S = scipy.sparse.csr_matrix(M)
    if symm == "general":
        scale = max(abs(S).max(), 1.0) if S.nnz else 1.0
        diff = S - S.conj().T
        asym = abs(diff).max() if diff.nnz else 0.0
        if asym > 1e-12 * scale:
            raise MatrixMarketError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
        S = 0.5 * (S + S.conj().T)
    if symm == "skew-symmetric":
        raise MatrixMarketError("skew-symmetric matrices are not Hermitian")
    name = str(path)
    if fmt == "array" or S.nnz > 0.25 * rows * rows:
        return HermitianOperator.from_dense(S.toarray(), name=name, check=False)
    return HermitianOperator.from_sparse(S, name=name)


def write_matrix_market(path, A, comment=""):
    """Write a real symmetric/Hermitian operator in coordinate format."""
    M = A.to_dense() if isinstance(A, HermitianOperator) else A
    S = scipy.sparse.coo_matrix(M)
    symm = "hermitian" if np.iscomplexobj(M) else "symmetric"
    scipy.io.mmwrite(path, S, comment=comment, symmetry=symm, precision=17)
