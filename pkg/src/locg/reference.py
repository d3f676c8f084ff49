"""Reference spectra: dense Hermitian eigensolver and the analytic 2D Laplacian spectrum."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateSpectrumError, NotHermitianError

DENSE_MAX_N = 4000


@dataclass(frozen=True)
class SpectralSummary:
    lambda_1: float
    lambda_2: float
    lambda_n: float
    kappa: float
    delta: float
    # a few of the smallest eigenvalues (with multiplicity), for per-column errors
    lowest: tuple = field(default=(), compare=False)

    def target(self, j):
        """Reference value for Ritz column ``j`` (0-based)."""
        if j < len(self.lowest):
            return self.lowest[j]
        if j == 0:
            return self.lambda_1
        return float("nan")


def dense_eigh(A):
    """All eigenpairs of a dense Hermitian matrix, values ascending."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if A.shape[0] > DENSE_MAX_N:
        raise ValueError(f"dense reference limited to n <= {DENSE_MAX_N}")
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.conj().T)) > 1e-12 * scale:
        raise NotHermitianError("dense_eigh requires a Hermitian matrix")
    w, V = scipy.linalg.eigh(A)
    return w, V


def laplacian2d_spectrum(N):
    """Eigenvalues -4 + 2cos(i pi/(N+1)) + 2cos(j pi/(N+1)), i, j = 1..N, ascending."""
    if N < 2:
        raise ValueError("N must be at least 2")
    c = 2.0 * np.cos(np.pi * np.arange(1, N + 1) / (N + 1))
    return np.sort((-4.0 + c[:, None] + c[None, :]).ravel())


def spectral_summary(values, keep_lowest=3):
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size < 2:
        raise DegenerateSpectrumError("need at least two eigenvalues")
    lam1, lamn = v[0], v[-1]
    spread = lamn - lam1
    if spread <= 0 or v[1] - lam1 <= 1e-14 * spread:
        raise DegenerateSpectrumError("degenerate smallest eigenvalue")
    lam2 = v[v > lam1 + 1e-12 * spread][0]
    kappa = spread / (lam2 - lam1)
    delta = (kappa - 1.0) / (kappa + 1.0)
    return SpectralSummary(float(lam1), float(lam2), float(lamn), float(kappa),
                           float(delta), tuple(float(x) for x in v[:keep_lowest]))
