"""Regularizer values and proximal operators.

Three regularizers are supported:

* ``RankPenalty(mu)``   -- the quadratic envelope of mu * rank(X),
* ``FixedRank(k)``      -- the quadratic envelope of the indicator of rank <= k,
* ``Nuclear(lam)``      -- lam * nuclear norm (convex baseline).

The quadratic envelope of a penalty f is the functional whose sum with
||x||^2 is the lsc convex envelope of f(x) + ||x||^2.  Envelope values and
proxes of the two rank regularizers are computed on singular values and
lifted back through the SVD frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import sort_abs, svd


@dataclass(frozen=True)
class RankPenalty:
    """Penalty weight mu on the rank; envelope value saturates at mu per direction."""

    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


@dataclass(frozen=True)
class FixedRank:
    """Target rank bound k; the envelope vanishes exactly on rank <= k."""

    k: int

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise ValueError(f"k must be an integer >= 1, got {self.k}")


@dataclass(frozen=True)
class Nuclear:
    """Nuclear-norm weight lam."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


Regularizer = RankPenalty | FixedRank | Nuclear


def _require_rho(rho: float) -> float:
    # rho = 2 makes the prox objective merely convex (multivalued at the
    # hard-threshold boundary); we require strong convexity.
    rho = float(rho)
    if not rho > 2:
        raise ValueError(f"rho must be > 2, got {rho}")
    return rho


def card_envelope_scalar(sigma, mu: float):
    """Single-coordinate envelope value: mu - max(sqrt(mu) - sigma, 0)^2.

    Vanishes at 0, saturates at mu for sigma >= sqrt(mu).
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    sigma = np.asarray(sigma, dtype=float)
    out = mu - np.maximum(np.sqrt(mu) - sigma, 0.0) ** 2
    return float(out) if out.ndim == 0 else out


def card_envelope(x: np.ndarray, mu: float) -> float:
    """Envelope of mu * card at x: sum of card_envelope_scalar(|x_i|)."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(card_envelope_scalar(np.abs(x), mu)))


def indicator_envelope(x: np.ndarray, k: int) -> float:
    """Envelope of the indicator of card(x) <= k.

    With z = |x| sorted non-increasing, the value is

        max_{s >= 0}  -sum_{i<=k} (max(z_i, s) - z_i)^2
                      + sum_{i>k} (2 s z_i - z_i^2),

    a concave piecewise-quadratic problem whose maximizer solves
    sum_{i<=k, z_i<s} (s - z_i) = sum_{i>k} z_i.  The sweep below finds it
    exactly from the sorted breakpoints.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    z = np.sort(np.abs(x))[::-1]
    tail = z[k:]
    tail_sum = float(tail.sum())
    if tail_sum == 0.0:
        return 0.0
    head_asc = np.sort(z[:k])
    csum = np.cumsum(head_asc)
    for j in range(1, k + 1):
        s = (csum[j - 1] + tail_sum) / j
        hi = head_asc[j] if j < k else np.inf
        if head_asc[j - 1] - 1e-12 <= s <= hi + 1e-12:
            active = head_asc[:j]
            return float(-np.sum((s - active) ** 2) + np.sum(2 * s * tail - tail**2))
    raise AssertionError("breakpoint sweep failed to bracket the maximizer")


def _indicator_envelope_max_point(z: np.ndarray, k: int) -> float:
    """Maximizing s for the envelope at sorted non-negative z (0 if tail empty)."""
    tail_sum = float(z[k:].sum())
    if tail_sum == 0.0:
        return 0.0
    head_asc = np.sort(z[:k])
    csum = np.cumsum(head_asc)
    for j in range(1, k + 1):
        s = (csum[j - 1] + tail_sum) / j
        hi = head_asc[j] if j < k else np.inf
        if head_asc[j - 1] - 1e-12 <= s <= hi + 1e-12:
            return float(s)
    raise AssertionError("breakpoint sweep failed to bracket the maximizer")


def prox_card_envelope(y: np.ndarray, mu: float, rho: float) -> np.ndarray:
    """Unique minimizer of card_envelope(x, mu) + (rho/2) ||x - y||^2.

    Entrywise three-case map:
        y_i                                   if |y_i| >= sqrt(mu)
        (rho y_i - 2 sqrt(mu) sign(y_i)) / (rho - 2)
                                              if 2 sqrt(mu)/rho <= |y_i| <= sqrt(mu)
        0                                     if |y_i| <= 2 sqrt(mu)/rho
    """
    rho = _require_rho(rho)
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    y = np.asarray(y, dtype=float)
    smu = np.sqrt(mu)
    a = np.abs(y)
    shrunk = (rho * y - 2.0 * smu * np.sign(y)) / (rho - 2.0)
    return np.where(a >= smu, y, np.where(a <= 2.0 * smu / rho, 0.0, shrunk))


def _prox_indicator_sorted(z: np.ndarray, k: int, rho: float) -> tuple[np.ndarray, float]:
    """Prox of the indicator envelope for sorted non-negative z.

    Returns (x, t_star) where x solves min indicator_envelope(x, k)
    + (rho/2)||x - z||^2 and t_star is the internal threshold: x applies
    the three-case map of prox_card_envelope with sqrt(mu) replaced by
    t_star, and t_star solves the monotone piecewise-linear equation

        sum_{i<=k, x_i(t) < t} (t - x_i(t)) = sum_{i>k} x_i(t).
    """
    n = z.size
    if k == n or float(z[k:].sum()) == 0.0:
        return z.copy(), 0.0

    def xmap(t: float) -> np.ndarray:
        shrunk = (rho * z - 2.0 * t) / (rho - 2.0)
        return np.where(z >= t, z, np.where(z >= 2.0 * t / rho, shrunk, 0.0))

    def phi(t: float) -> float:
        x = xmap(t)
        lhs = float(np.sum(np.where(z[:k] < t, t - x[:k], 0.0)))
        return lhs - float(np.sum(x[k:]))

    pos = z[z > 0]
    bps = np.unique(np.concatenate([[0.0], pos, rho * pos / 2.0]))
    vals = np.array([phi(t) for t in bps])
    # phi is non-decreasing, phi(0) <= 0, and phi > 0 at the largest breakpoint
    idx = int(np.argmax(vals >= 0.0))
    if vals[idx] < 0.0:
        raise AssertionError("threshold root not bracketed by breakpoints")
    if idx == 0:
        t_star = float(bps[0])
    else:
        t0, t1 = float(bps[idx - 1]), float(bps[idx])
        f0, f1 = float(vals[idx - 1]), float(vals[idx])
        t_star = t0 if f1 == f0 else t0 + (0.0 - f0) * (t1 - t0) / (f1 - f0)
    return xmap(t_star), t_star


def prox_indicator_envelope(y: np.ndarray, k: int, rho: float) -> np.ndarray:
    """Unique minimizer of indicator_envelope(x, k) + (rho/2) ||x - y||^2.

    Reduces to sorted non-negative y, solves for the scalar threshold by an
    exact breakpoint sweep, then restores signs and order.
    """
    rho = _require_rho(rho)
    y = np.asarray(y, dtype=float)
    n = y.size
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    sa = sort_abs(y)
    x, _ = _prox_indicator_sorted(sa.values, k, rho)
    return sa.restore(x)


def soft_threshold(y: np.ndarray, tau: float) -> np.ndarray:
    """Entrywise sign(y) * max(|y| - tau, 0)."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    y = np.asarray(y, dtype=float)
    return np.sign(y) * np.maximum(np.abs(y) - tau, 0.0)


def hard_threshold(y: np.ndarray, thr: float) -> tuple[np.ndarray, bool]:
    """Keep entries with |y_i| > thr, zero the rest.

    At |y_i| == thr (within 1e-12) the minimizer of the underlying rank
    problem is not unique; we pick 0 and flag the ambiguity in the second
    return value.
    """
    if not thr > 0:
        raise ValueError(f"thr must be positive, got {thr}")
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    ambiguous = bool(np.any(np.abs(a - thr) <= 1e-12))
    return np.where(a > thr, y, 0.0), ambiguous


def reg_value_vec(x: np.ndarray, reg: Regularizer) -> float:
    """Regularizer value on a vector (of singular values or raw entries)."""
    if isinstance(reg, RankPenalty):
        return card_envelope(x, reg.mu)
    if isinstance(reg, FixedRank):
        return indicator_envelope(x, reg.k)
    if isinstance(reg, Nuclear):
        return float(reg.lam * np.sum(np.abs(x)))
    raise TypeError(f"unknown regularizer {reg!r}")


def reg_prox_vec(y: np.ndarray, reg: Regularizer, rho: float) -> np.ndarray:
    """Prox of the regularizer with curvature weight rho/2 on a vector.

    For Nuclear(lam) the data weight rho/2 turns the threshold into lam/rho.
    """
    if isinstance(reg, RankPenalty):
        return prox_card_envelope(y, reg.mu, rho)
    if isinstance(reg, FixedRank):
        return prox_indicator_envelope(y, reg.k, rho)
    if isinstance(reg, Nuclear):
        _require_rho(rho)
        return soft_threshold(y, reg.lam / rho)
    raise TypeError(f"unknown regularizer {reg!r}")


def reg_value_matrix(X: np.ndarray, reg: Regularizer) -> float:
    """Regularizer value at a matrix: the vector value on sigma(X)."""
    return reg_value_vec(svd(np.asarray(X, dtype=float)).sigma, reg)


def reg_prox_matrix(X: np.ndarray, reg: Regularizer, rho: float) -> np.ndarray:
    """Matrix prox: SVD-lift of the matching vector prox.

    prox(X) = U diag(prox(sigma(X))) V^T with the SVD factors of X.
    """
    dec = svd(np.asarray(X, dtype=float))
    return dec.reconstruct(reg_prox_vec(dec.sigma, reg, rho))


# ---------------------------------------------------------------------------
# Brute-force envelope oracle (testing aid, n <= 3).
# ---------------------------------------------------------------------------

def _batched(f, pts: np.ndarray) -> np.ndarray:
    """Evaluate f on the rows of pts, vectorized when f supports it."""
    try:
        vals = np.asarray(f(pts), dtype=float)
        if vals.shape == (pts.shape[0],):
            return vals
    except Exception:
        pass
    return np.array([float(f(p)) for p in pts], dtype=float)


def _top_distinct(points: np.ndarray, order: np.ndarray, keep: int,
                  sep: float) -> np.ndarray:
    """Greedy pick of high-score points at pairwise inf-distance >= sep."""
    picked: list[np.ndarray] = []
    for i in order:
        p = points[i]
        if all(np.max(np.abs(p - q)) >= sep for q in picked):
            picked.append(p)
        if len(picked) == keep:
            break
    while len(picked) < keep:
        picked.append(picked[-1])
    return np.array(picked)


def envelope_bruteforce(f, x: np.ndarray, scale: float = 1.0) -> float:
    """Grid evaluation of the quadratic envelope of f at x (n <= 3 only).

    Applies the double transform S(S(f)) with
    S(f)(y) = sup_u -f(u) - ||u - y||^2.  Each sup is taken over a dense
    shared grid with bounds +-(||x||_inf + 3 * scale) to locate candidate
    basins, which are then refined by shrinking local grids down to step
    1e-7.  Exponential in the dimension; refuses n > 3.

    f must accept a single vector; batched evaluation over the rows of a
    2-D array is used automatically when supported.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n > 3:
        raise ValueError("brute-force envelope oracle is limited to n <= 3")
    bound = float(np.max(np.abs(x)) if n else 0.0) + 3.0 * float(scale)
    dense = {1: 4001, 2: 161, 3: 33}[n]
    offs = np.linspace(-bound, bound, dense)
    grid = np.stack(np.meshgrid(*([offs] * n), indexing="ij"), axis=-1).reshape(-1, n)
    f_grid = _batched(f, grid)
    neg_base = -f_grid - np.sum(grid * grid, axis=1)
    coarse_step = 2.0 * bound / (dense - 1)
    # the inner maximand has up to 2^n basins; the outer one is concave
    n_cand, n_cand_outer, p = 2 ** n, 2, 5
    step_final = 1e-7
    mesh = np.stack(np.meshgrid(*([np.linspace(-1.0, 1.0, p)] * n),
                                indexing="ij"), axis=-1).reshape(-1, n)

    def scan_chunks(ys: np.ndarray):
        # score rows -f(u) - ||u - y||^2 on the shared grid, chunk by chunk
        chunk = max(1, int(2e7) // grid.shape[0])
        for lo in range(0, ys.shape[0], chunk):
            Y = ys[lo:lo + chunk]
            yield lo, (neg_base[None, :] + 2.0 * (Y @ grid.T)
                       - np.sum(Y * Y, axis=1)[:, None])

    def basin_candidates(ys: np.ndarray) -> np.ndarray:
        # well-separated high-score grid points per row, one per basin
        centers = np.empty((ys.shape[0], n_cand, n))
        m = min(48, grid.shape[0])
        for lo, scores in scan_chunks(ys):
            rough = np.argpartition(-scores, m - 1, axis=1)[:, :m]
            for r in range(scores.shape[0]):
                idx = rough[r][np.argsort(-scores[r, rough[r]])]
                centers[lo + r] = _top_distinct(grid, idx, n_cand,
                                                1.5 * coarse_step)
        return centers

    def refine(ys: np.ndarray, centers: np.ndarray, hw0: float,
               target: float) -> np.ndarray:
        # batched per-candidate shrinking grids; returns the max per row
        hw = hw0
        centers = centers.copy()
        n_c = centers.shape[1]
        reps = n_c * mesh.shape[0]
        while True:
            pts = centers[:, :, None, :] + hw * mesh[None, None, :, :]
            flat = pts.reshape(-1, n)
            sq = np.sum((flat - np.repeat(ys, reps, axis=0)) ** 2, axis=1)
            vals = (-_batched(f, flat) - sq).reshape(ys.shape[0], n_c,
                                                     mesh.shape[0])
            arg = np.argmax(vals, axis=2)
            centers = np.take_along_axis(
                pts, arg[:, :, None, None], axis=2)[:, :, 0, :]
            best = np.max(vals, axis=(1, 2))
            step = 2.0 * hw / (p - 1)
            if step <= target:
                return best
            hw = step

    def inner_values(ys: np.ndarray, target: float) -> np.ndarray:
        return refine(ys, basin_candidates(ys), coarse_step, target)

    # outer sup over v of -S(f)(v) - ||v - x||^2: the objective is concave
    # in v, so a strided scan localizes its single peak; the candidates are
    # then refined against the accurate inner sup (whose precision tracks
    # the shrinking outer step)
    stride = {1: 1, 2: 2, 3: 3}[n]
    sub = grid.reshape(*([dense] * n), n)[(slice(None, None, stride),) * n]
    sub = sub.reshape(-1, n)
    rough_vals = np.empty(sub.shape[0])
    for lo, scores in scan_chunks(sub):
        rough_vals[lo:lo + scores.shape[0]] = np.max(scores, axis=1)
    outer_scores = -rough_vals - np.sum((sub - x) ** 2, axis=1)
    centers = _top_distinct(sub, np.argsort(-outer_scores), n_cand_outer,
                            1.5 * stride * coarse_step)
    hw = stride * coarse_step
    while True:
        pts = (centers[:, None, :] + hw * mesh[None, :, :]).reshape(-1, n)
        inner_target = max(step_final, 1e-3 * hw)
        vals = -inner_values(pts, inner_target) - np.sum((pts - x) ** 2, axis=1)
        per_cand = vals.reshape(n_cand_outer, mesh.shape[0])
        arg = np.argmax(per_cand, axis=1)
        centers = pts.reshape(n_cand_outer, mesh.shape[0], n)[
            np.arange(n_cand_outer), arg]
        value = float(np.max(per_cand))
        step = 2.0 * hw / (p - 1)
        if step <= step_final:
            return value
        hw = step
