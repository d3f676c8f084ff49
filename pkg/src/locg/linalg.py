"""Block kernels: operators, orthonormalization, Rayleigh quotients, residuals."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import EmptyBasisError, NotHermitianError, RankDeficientError

GRAM_COND_MAX = 1e14


class HermitianOperator:
    """A self-adjoint linear map on C^n (or R^n), possibly matrix-free.

    ``apply`` maps an ``n x k`` block to an ``n x k`` block.  ``scale`` is an
    upper estimate of ``||A||`` used for dimensionless tolerances.
    """

    def __init__(self, n: int, apply: Callable, dense=None, scalar_field="real",
                 scale: Optional[float] = None, diagonal=None, name=""):
        if n <= 0:
            raise ValueError("operator dimension must be positive")
        if scalar_field not in ("real", "complex"):
            raise ValueError(f"unknown scalar field {scalar_field!r}")
        self.n = int(n)
        self._apply = apply
        self.dense = dense
        self.scalar_field = scalar_field
        self.scale = scale
        self._diagonal = diagonal
        self.name = name

    @property
    def dtype(self):
        return np.complex128 if self.scalar_field == "complex" else np.float64

    def apply(self, X):
        X = np.asarray(X)
        if X.ndim == 1:
            return self._apply(X[:, None])[:, 0]
        if X.shape[0] != self.n:
            raise ValueError(f"block has {X.shape[0]} rows, operator is {self.n}")
        return self._apply(X)

    __call__ = apply

    def __matmul__(self, X):
        return self.apply(X)

    def diagonal(self):
        if self._diagonal is not None:
            return np.asarray(self._diagonal)
        if self.dense is not None:
            return np.diag(self.dense).copy()
        return np.real(np.array([self.apply(e)[i] for i, e in
                                 enumerate(np.eye(self.n, dtype=self.dtype))]))

    def to_dense(self):
        if self.dense is not None:
            return np.asarray(self.dense)
        M = self.apply(np.eye(self.n, dtype=self.dtype))
        return 0.5 * (M + M.conj().T)

    @classmethod
    def from_dense(cls, M, name="", check=True):
        M = np.asarray(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("matrix must be square")
        if check:
            asym = np.max(np.abs(M - M.conj().T)) if M.size else 0.0
            if asym > 1e-12 * max(np.max(np.abs(M)), 1.0):
                raise NotHermitianError(f"matrix is not Hermitian (asymmetry {asym:.3e})")
        field = "complex" if np.iscomplexobj(M) else "real"
        scale = float(np.max(np.sum(np.abs(M), axis=0))) if M.size else 0.0
        return cls(M.shape[0], lambda X: M @ X, dense=M, scalar_field=field,
                   scale=scale, diagonal=np.real(np.diag(M)).copy(), name=name)

    @classmethod
    def from_sparse(cls, S, name=""):
        S = S.tocsr()
        field = "complex" if np.iscomplexobj(S.data) else "real"
        scale = float(abs(S).sum(axis=0).max()) if S.nnz else 0.0
        return cls(S.shape[0], lambda X: np.asarray(S @ X), scalar_field=field,
                   scale=scale, diagonal=S.diagonal(), name=name)


class CountingOperator(HermitianOperator):
    """Wraps an operator and counts applied columns (one per matrix-vector product)."""

    def __init__(self, inner: HermitianOperator):
        super().__init__(inner.n, inner._apply, dense=inner.dense,
                         scalar_field=inner.scalar_field, scale=inner.scale,
                         diagonal=inner._diagonal, name=inner.name)
        self.inner = inner
        self.count = 0

    def apply(self, X):
        X = np.asarray(X)
        self.count += 1 if X.ndim == 1 else X.shape[1]
        return super().apply(X)

    __call__ = apply

    def __matmul__(self, X):
        return self.apply(X)


@dataclass
class RitzDecomposition:
    values: np.ndarray   # ascending
    vectors: np.ndarray  # n x k, orthonormal


def as_block(X):
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ValueError("block contains non-finite entries")
    return X


def orthonormalize(B, drop_tol=1e-10, against=None):
    """Orthonormal basis of range(B) by modified Gram-Schmidt with a second pass.

    Columns whose part orthogonal to the already accepted ones is at most
    ``drop_tol`` times their norm are dropped.  Returns ``(Q, rank)``.
    """
    B = as_block(B)
    if B.shape[1] == 0:
        raise ValueError("block has no columns")
    if drop_tol <= 0:
        raise ValueError("drop_tol must be positive")
    Q, _, _ = _kernels.mgs(B, Q0=against, drop_tol=drop_tol)
    if Q.shape[1] == 0:
        raise EmptyBasisError("empty basis: every column was dropped")
    return Q, Q.shape[1]


def _inv_sqrt_gram(X):
    G = X.conj().T @ X
    G = 0.5 * (G + G.conj().T)
    w, V = np.linalg.eigh(G)
    if w[0] <= 0 or w[-1] > GRAM_COND_MAX * w[0]:
        raise RankDeficientError("rank deficient block (Gram matrix condition above 1e14)")
    return (V / np.sqrt(w)) @ V.conj().T


def rayleigh_quotient(A, X, AX=None):
    """rho(X) = (X^H X)^{-1/2} X^H A X (X^H X)^{-1/2}, a Hermitian k x k matrix."""
    X = as_block(X)
    if AX is None:
        AX = A.apply(X)
    S = _inv_sqrt_gram(X)
    M = S @ (X.conj().T @ AX) @ S
    return 0.5 * (M + M.conj().T)


def residual(A, X, AX=None):
    """r(X) = A X (X^H X)^{-1/2} - X (X^H X)^{-1/2} rho(X)."""
    X = as_block(X)
    if AX is None:
        AX = A.apply(X)
    S = _inv_sqrt_gram(X)
    rho = S @ (X.conj().T @ AX) @ S
    rho = 0.5 * (rho + rho.conj().T)
    return AX @ S - X @ (S @ rho)


def project_out(X, V):
    """(I - X X^H) V for orthonormal X."""
    X = as_block(X)
    V = np.asarray(V)
    if X.shape[0] != V.shape[0]:
        raise ValueError("shape mismatch")
    return V - X @ (X.conj().T @ V)
