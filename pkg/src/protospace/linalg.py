"""Dense linear algebra primitives.

Vectors are 1-D float64 numpy arrays and matrices are 2-D float64 arrays.
Inputs arriving as float32 (or lists) are widened on entry.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateVectorError,
    DimensionError,
    InputError,
    InsufficientDataError,
    NumericalError,
)

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60
UNIT_NORM_TOL = 1e-9


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("vector contains non-finite values")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("matrix contains non-finite entries")
    return arr


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(a @ b)


def normalize(v) -> np.ndarray:
    """Return ``v / ||v||``. Raises DegenerateVectorError for the zero vector."""
    v = as_vector(v)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise DegenerateVectorError("cannot normalize a zero vector")
    return v / norm


def apply_matrix(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.size:
        raise DimensionError(f"matrix has {m.shape[1]} columns, vector has dimension {v.size}")
    return m @ v


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Tournament ordering: every column pair appears exactly once per sweep and
    # pairs within a round are disjoint, so a round can be applied at once.
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        if ps:
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_columns(a: np.ndarray, tol: float, max_sweeps: int):
    """One-sided Jacobi: rotate columns of ``a`` until mutually orthogonal.

    Returns the rotated matrix and the accumulated rotation ``v`` so that
    ``a_in @ v == a_out``.
    """
    n = a.shape[1]
    v = np.eye(n)
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap, aq = a[:, p], a[:, q]
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            return a, v
    raise NumericalError(f"Jacobi SVD did not converge within {max_sweeps} sweeps")


def _complete_orthonormal(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged ``good`` with an orthonormal completion."""
    m = u.shape[0]
    basis = [u[:, j] for j in range(u.shape[1]) if good[j]]
    for j in range(u.shape[1]):
        if good[j]:
            continue
        q = np.array(basis).T if basis else np.zeros((m, 0))
        # Pick the standard basis vector with the largest residual; project twice.
        residual = np.eye(m) - q @ q.T
        col = residual[:, int(np.argmax(np.linalg.norm(residual, axis=0)))]
        col = col - q @ (q.T @ col)
        col /= np.linalg.norm(col)
        u[:, j] = col
        basis.append(col)
    return u


def svd(m, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Thin singular value decomposition ``m = U @ diag(S) @ V.T``.

    One-sided Jacobi with round-robin cyclic sweeps. ``S`` is descending and
    non-negative; ``U`` is rows x k and ``V`` is cols x k with
    ``k = min(rows, cols)``.
    """
    m = as_matrix(m)
    transposed = m.shape[0] < m.shape[1]
    a = (m.T if transposed else m).copy()
    a, v = _jacobi_columns(a, tol, max_sweeps)

    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s, kind="stable")
    s, a, v = s[order], a[:, order], v[:, order]

    cutoff = max(a.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    good = s > cutoff
    u = np.zeros_like(a)
    u[:, good] = a[:, good] / s[good]
    if not good.all():
        u = _complete_orthonormal(u, good)

    if transposed:
        return v, s, u
    return u, s, v


def pca_project(vectors, k: int) -> np.ndarray:
    """Project mean-centered vectors onto their top-``k`` principal directions.

    Each component is sign-fixed so its largest-magnitude loading is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("PCA needs at least 2 vectors of equal dimension")
    if not 1 <= k <= x.shape[1]:
        raise InputError(f"k must lie in [1, {x.shape[1]}], got {k}")
    centered = x - x.mean(axis=0)
    _, _, v = svd(centered)
    loadings = v[:, :k]
    if loadings.shape[1] < k:
        # fewer samples than requested components: pad with orthogonal directions
        full = np.zeros((x.shape[1], k))
        full[:, : loadings.shape[1]] = loadings
        good = np.zeros(k, dtype=bool)
        good[: loadings.shape[1]] = True
        loadings = _complete_orthonormal(full, good)
    idx = np.argmax(np.abs(loadings), axis=0)
    signs = np.where(loadings[idx, np.arange(k)] < 0, -1.0, 1.0)
    return centered @ (loadings * signs)


def random_orthogonal(d: int, seed: int) -> np.ndarray:
    """Seeded orthogonal matrix from the QR factorisation of a Gaussian matrix."""
    if d < 1:
        raise InputError("dimension must be positive")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs
