"""Dense spectral primitives: SVD with fixed conventions and lifting of
symmetric vector functions to matrix functions.

Everything here works on plain 2-D float ndarrays.  Singular values are
always returned non-negative and non-increasing; U is n1 x n1 and V is
n2 x n2 (full, not thin), so a matrix is reconstructed as
``U @ diag_embed(sigma, n1, n2) @ V.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative cutoff used everywhere a numerical rank is needed.
TAU_RANK = 1e-6


class SvdError(RuntimeError):
    """The underlying decomposition failed to converge."""


@dataclass(frozen=True)
class Svd:
    """Full singular value decomposition X = U diag(sigma) V^T.

    U is n1 x n1 orthogonal, V is n2 x n2 orthogonal, sigma has length
    min(n1, n2), non-negative and sorted non-increasing.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def reconstruct(self, sigma: np.ndarray | None = None) -> np.ndarray:
        s = self.sigma if sigma is None else np.asarray(sigma, dtype=float)
        n1, n2 = self.shape
        return self.U @ diag_embed(s, n1, n2) @ self.V.T


def diag_embed(values: np.ndarray, n1: int, n2: int) -> np.ndarray:
    """Place a length-min(n1,n2) vector on the diagonal of an n1 x n2 matrix."""
    values = np.asarray(values, dtype=float)
    n = min(n1, n2)
    if values.shape != (n,):
        raise ValueError(f"expected {n} diagonal values, got shape {values.shape}")
    out = np.zeros((n1, n2))
    out[np.arange(n), np.arange(n)] = values
    return out


def svd(X: np.ndarray) -> Svd:
    """Deterministic full SVD of a real matrix.

    Signs are fixed per singular triplet: the entry of largest magnitude
    in each left singular vector is made positive (ties broken by lowest
    index).  This is only needed for bit-level determinism across calls,
    never for correctness.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix has non-finite entries")
    try:
        U, s, Vh = np.linalg.svd(X, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge for shape {X.shape}") from exc
    V = Vh.T.copy()
    U = U.copy()
    n = min(X.shape)
    for i in range(n):
        j = int(np.argmax(np.abs(U[:, i])))
        if U[j, i] < 0:
            U[:, i] = -U[:, i]
            V[:, i] = -V[:, i]
    return Svd(U=U, sigma=s, V=V)


def singular_values(X: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)


def rank_from_sigma(sigma: np.ndarray, tau: float = TAU_RANK) -> int:
    """Numerical rank: number of singular values above tau * max(sigma_1, 1)."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size == 0:
        return 0
    return int(np.count_nonzero(sigma > tau * max(float(sigma[0]), 1.0)))


def numerical_rank(X: np.ndarray, tau: float = TAU_RANK) -> int:
    return rank_from_sigma(singular_values(X), tau)


def lift_spectral(f_on_vector, X: np.ndarray) -> float:
    """Evaluate the spectral lift of an absolutely symmetric vector function.

    Returns f(sigma(X)).  The caller guarantees absolute symmetry of f
    (invariance under permutations and sign flips), which makes the lift
    well defined.
    """
    return float(f_on_vector(svd(X).sigma))


def lift_spectral_map(g_on_vector, X: np.ndarray) -> np.ndarray:
    """Apply a symmetric vector-to-vector map to the spectrum of X.

    Returns U diag(g(sigma(X))) V^T using the SVD factors of X.  g must
    map sorted non-negative vectors to same-length vectors.
    """
    dec = svd(X)
    g = np.asarray(g_on_vector(dec.sigma), dtype=float)
    if g.shape != dec.sigma.shape:
        raise ValueError(
            f"spectral map returned shape {g.shape}, expected {dec.sigma.shape}"
        )
    return dec.reconstruct(g)


@dataclass(frozen=True)
class SortedAbsVector:
    """Absolute values sorted non-increasing, with the data to undo it.

    ``values[k] == abs(x[permutation[k]])`` and
    ``x[permutation[k]] == signs[k] * values[k]``.
    """

    values: np.ndarray
    permutation: np.ndarray
    signs: np.ndarray

    def restore(self, values: np.ndarray | None = None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=float)
        out = np.empty_like(v)
        out[self.permutation] = self.signs * v
        return out


def sort_abs(x: np.ndarray) -> SortedAbsVector:
    """Stable sort of |x| in non-increasing order (ties keep input order)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a 1-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    perm = np.argsort(-np.abs(x), kind="stable")
    signs = np.where(x[perm] < 0, -1.0, 1.0)
    return SortedAbsVector(values=np.abs(x[perm]), permutation=perm, signs=signs)
