"""Locally optimal block preconditioned extended conjugate gradient eigensolver."""

from .errors import (BreakdownError, DegenerateSpectrumError, EmptyBasisError, LocgError,
                     MatrixMarketError, NotHermitianError, RankDeficientError,
                     SubspaceCollapseError)
from .linalg import (CountingOperator, HermitianOperator, RitzDecomposition, orthonormalize,
                     project_out, rayleigh_quotient, residual)
from .problems import (ProblemSpec, cluster_outlier, haar_orthonormal, haar_special_orthogonal,
                       laplacian2d, load_matrix_market, outlier_cluster, start_block)
from .reference import SpectralSummary, dense_eigh, laplacian2d_spectrum, spectral_summary
from .solver import (ConvergenceTrace, IterationRecord, SolverConfig, SolverState,
                     build_search_subspace, locg_solve, locg_step, make_preconditioner,
                     rayleigh_ritz)

__version__ = "0.1.0"
