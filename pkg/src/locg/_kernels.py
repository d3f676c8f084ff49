"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``LOCG_NUMBA`` is not set to
``0``/``false``/``no``.  Both paths perform the same floating point
operations in the same order, so results agree to roundoff.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None


def _env_wants_numba():
    flag = os.environ.get("LOCG_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = numba is not None and _env_wants_numba()


# ---------------------------------------------------------------------------
# five-point stencil  (2D Dirichlet Laplacian, diagonal -4, neighbours +1)
# ---------------------------------------------------------------------------

def stencil5_numpy(U, N):
    k = U.shape[1]
    G = U.reshape(N, N, k)
    V = -4.0 * G
    V[1:] += G[:-1]
    V[:-1] += G[1:]
    V[:, 1:] += G[:, :-1]
    V[:, :-1] += G[:, 1:]
    return V.reshape(N * N, k)


def _stencil5_loop(U, N):
    k = U.shape[1]
    V = np.empty_like(U)
    for i in range(N):
        for j in range(N):
            p = i * N + j
            for c in range(k):
                s = -4.0 * U[p, c]
                if i > 0:
                    s += U[p - N, c]
                if i < N - 1:
                    s += U[p + N, c]
                if j > 0:
                    s += U[p - 1, c]
                if j < N - 1:
                    s += U[p + 1, c]
                V[p, c] = s
    return V


# ---------------------------------------------------------------------------
# modified Gram-Schmidt, one full reorthogonalisation pass, optional image
# ---------------------------------------------------------------------------
#
# Columns of B are orthonormalised against the fixed orthonormal block Q0
# (not returned) and against previously accepted columns.  When with_image
# is set, AB holds A @ B and every column operation is replayed on it so the
# returned AQ equals A @ Q without further operator applications.

def mgs_numpy(B, AB, Q0, AQ0, drop_tol, with_image):
    n, m = B.shape
    n0 = Q0.shape[1]
    Q = np.empty((n, m), dtype=B.dtype)
    AQ = np.empty((n, m), dtype=B.dtype) if with_image else Q[:, :0]
    kept = np.zeros(m, dtype=np.bool_)
    rank = 0
    for c in range(m):
        v = B[:, c].copy()
        av = AB[:, c].copy() if with_image else v[:0]
        norm0 = np.sqrt(np.vdot(v, v).real)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for i in range(n0):
                h = np.vdot(Q0[:, i], v)
                v -= h * Q0[:, i]
                if with_image:
                    av -= h * AQ0[:, i]
            for i in range(rank):
                h = np.vdot(Q[:, i], v)
                v -= h * Q[:, i]
                if with_image:
                    av -= h * AQ[:, i]
        norm = np.sqrt(np.vdot(v, v).real)
        if norm <= drop_tol * norm0:
            continue
        Q[:, rank] = v / norm
        if with_image:
            AQ[:, rank] = av / norm
        kept[c] = True
        rank += 1
    return Q[:, :rank], (AQ[:, :rank] if with_image else None), kept


def _mgs_loop(B, AB, Q0, AQ0, drop_tol, with_image):
    n, m = B.shape
    n0 = Q0.shape[1]
    Q = np.empty((n, m), dtype=B.dtype)
    AQ = np.empty((n, m), dtype=B.dtype)
    kept = np.zeros(m, dtype=np.bool_)
    v = np.empty(n, dtype=B.dtype)
    av = np.empty(n, dtype=B.dtype)
    rank = 0
    for c in range(m):
        norm0 = 0.0
        for p in range(n):
            v[p] = B[p, c]
            norm0 += (np.conj(v[p]) * v[p]).real
            if with_image:
                av[p] = AB[p, c]
        norm0 = np.sqrt(norm0)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for i in range(n0 + rank):
                h = v[0] * 0
                if i < n0:
                    for p in range(n):
                        h += np.conj(Q0[p, i]) * v[p]
                    for p in range(n):
                        v[p] -= h * Q0[p, i]
                    if with_image:
                        for p in range(n):
                            av[p] -= h * AQ0[p, i]
                else:
                    q = i - n0
                    for p in range(n):
                        h += np.conj(Q[p, q]) * v[p]
                    for p in range(n):
                        v[p] -= h * Q[p, q]
                    if with_image:
                        for p in range(n):
                            av[p] -= h * AQ[p, q]
        norm = 0.0
        for p in range(n):
            norm += (np.conj(v[p]) * v[p]).real
        norm = np.sqrt(norm)
        if norm <= drop_tol * norm0:
            continue
        for p in range(n):
            Q[p, rank] = v[p] / norm
            if with_image:
                AQ[p, rank] = av[p] / norm
        kept[c] = True
        rank += 1
    return Q[:, :rank].copy(), AQ[:, :rank].copy(), kept


if numba is not None:
    stencil5_numba = numba.njit(cache=True, nogil=True)(_stencil5_loop)
    _mgs_numba_raw = numba.njit(cache=True, nogil=True)(_mgs_loop)

    def mgs_numba(B, AB, Q0, AQ0, drop_tol, with_image):
        B = np.ascontiguousarray(B)
        dt = B.dtype
        if not with_image:
            AB = np.empty((B.shape[0], 0), dtype=dt)
            AQ0 = np.empty((B.shape[0], 0), dtype=dt)
        Q, AQ, kept = _mgs_numba_raw(
            B, np.ascontiguousarray(AB, dtype=dt),
            np.ascontiguousarray(Q0, dtype=dt),
            np.ascontiguousarray(AQ0, dtype=dt),
            float(drop_tol), bool(with_image))
        return Q, (AQ if with_image else None), kept
else:  # pragma: no cover
    stencil5_numba = None
    mgs_numba = None


def stencil5(U, N):
    if USE_NUMBA:
        return stencil5_numba(np.ascontiguousarray(U), N)
    return stencil5_numpy(U, N)


def mgs(B, AB=None, Q0=None, AQ0=None, drop_tol=1e-10):
    """Orthonormalise ``B`` (optionally against ``Q0``), returning
    ``(Q, AQ, kept)``.  ``AQ`` is None unless ``AB`` was given."""
    n = B.shape[0]
    with_image = AB is not None
    dt = np.result_type(B, *(a for a in (AB, Q0) if a is not None))
    B = np.asarray(B, dtype=dt)
    if Q0 is None:
        Q0 = np.empty((n, 0), dtype=dt)
        AQ0 = np.empty((n, 0), dtype=dt)
    elif with_image and AQ0 is None:
        raise ValueError("AQ0 is required when AB is given and Q0 is not empty")
    if AQ0 is None:
        AQ0 = np.empty((n, 0), dtype=dt)
    if not with_image:
        AB = B[:, :0]
    impl = mgs_numba if USE_NUMBA else mgs_numpy
    return impl(B, AB, np.asarray(Q0, dtype=dt), np.asarray(AQ0, dtype=dt),
                drop_tol, with_image)
