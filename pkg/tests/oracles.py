"""Independent search oracles used by the tests.

These deliberately avoid the closed-form prox formulas under test: they
minimize the objectives directly by dense 1-D scans or multi-directional
pattern search, relying only on envelope *values* (which are themselves
pinned against the brute-force double-transform oracle and closed forms).
"""

import itertools

import numpy as np

from rankenv.envelopes import card_envelope_scalar, indicator_envelope


def prox_card_oracle_1d(y: float, mu: float, rho: float) -> float:
    """Dense scan + golden-section refinement of the scalar prox objective."""

    def obj(t):
        return card_envelope_scalar(np.abs(t), mu) + 0.5 * rho * (t - y) ** 2

    span = abs(y) + np.sqrt(mu) + 1.0
    grid = np.linspace(-span, span, 4001)
    vals = obj(grid)
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    # golden-section on the bracketing cell
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - gr * (b - a), a + gr * (b - a)
    for _ in range(80):
        if obj(c) < obj(d):
            b, d = d, c
            c = b - gr * (b - a)
        else:
            a, c = c, d
            d = a + gr * (b - a)
    return 0.5 * (a + b)


def _direction_set(n: int) -> np.ndarray:
    dirs = [np.array(d, dtype=float)
            for d in itertools.product((-1.0, 0.0, 1.0), repeat=n)
            if any(d)]
    return np.array([d / np.linalg.norm(d) for d in dirs])


def pattern_search_min(obj, x0: np.ndarray, step: float,
                       step_min: float = 1e-9, extra_starts=()) -> np.ndarray:
    """Multi-directional pattern search; exact on these convex objectives.

    The direction set contains every +-1/0 sign pattern, which positively
    spans R^n densely enough that the kinks of the envelope objectives
    cannot stall the descent.
    """
    n = x0.size
    dirs = _direction_set(n)
    best_x, best_f = None, np.inf
    for start in (x0, *extra_starts):
        x = np.asarray(start, dtype=float).copy()
        f = obj(x)
        s = step
        while s > step_min:
            cand = x[None, :] + s * dirs
            vals = np.array([obj(c) for c in cand])
            j = int(np.argmin(vals))
            if vals[j] < f - 1e-16:
                x, f = cand[j], vals[j]
            else:
                s *= 0.5
        if f < best_f:
            best_x, best_f = x, f
    return best_x


def prox_indicator_oracle(y: np.ndarray, k: int, rho: float) -> np.ndarray:
    """Search minimizer of the rank-bound envelope prox objective."""

    def obj(x):
        return indicator_envelope(x, k) + 0.5 * rho * np.sum((x - y) ** 2)

    y = np.asarray(y, dtype=float)
    # keep the k largest as a second start (the envelope vanishes there)
    keep = np.zeros_like(y)
    order = np.argsort(-np.abs(y))[:k]
    keep[order] = y[order]
    span = max(1.0, float(np.max(np.abs(y))))
    return pattern_search_min(obj, y.copy(), step=span,
                              extra_starts=(keep, np.zeros_like(y)))


def truncated_svd_best(M: np.ndarray, k: int) -> np.ndarray:
    """Best rank-k approximation in Frobenius norm (independent route)."""
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    s = s.copy()
    s[k:] = 0.0
    return (U * s) @ Vh
