"""Stationarity verification and optimality certificates.

A point X is stationary for  reg(X) + ||A X - b||^2  exactly when its
associated point Z = (I - A*A) X + A* b lies in the subdifferential of
G = (reg + ||.||^2) / 2.  This module tests that membership directly in
the SVD frame of X, estimates the lower restricted isometry constant of
the operator, and evaluates the sufficient conditions under which a
low-rank stationary point is certifiably the unique or global minimizer.

Verdicts are gated on the provenance of the isometry constant: a
heuristic search only ever produces a lower bound on delta, and every
certificate condition gets harder as delta grows, so a lower bound can
refute a hypothesis but never certify one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envelopes import (FixedRank, Nuclear, RankPenalty, Regularizer,
                        _indicator_envelope_max_point, reg_prox_matrix)
from .problem import LinearOp, ProblemInstance, scaled_identity_factor, stream_seed
from .solvers import associated_point
from .spectral import rank_from_sigma, svd

VERDICT_CERTIFIED_UNIQUE = "certified_unique_lowrank"
VERDICT_CERTIFIED_GLOBAL = "certified_global"
VERDICT_REFUTED = "refuted"
VERDICT_INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SubgradientQuery:
    """Membership query: does W lie in the subdifferential of G at X?"""

    X: np.ndarray
    W: np.ndarray
    reg: Regularizer

    def __post_init__(self):
        if np.shape(self.X) != np.shape(self.W):
            raise ValueError("X and W must have the same shape")


@dataclass
class StationarityReport:
    subdiff_ok: bool
    subdiff_residual: float
    fixed_point_residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.subdiff_ok and self.fixed_point_residual <= self.tol


@dataclass
class ConditionCheck:
    holds: bool
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass
class CertificateReport:
    stationarity_residual: float
    sigma_z: np.ndarray
    delta_estimate: float
    delta_provenance: str
    conditions: dict[str, bool]
    verdict: str
    details: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        """Flat key=value block, one line per item."""
        lines = [
            f"verdict={self.verdict}",
            f"stationarity_residual={self.stationarity_residual:.6g}",
            f"delta_estimate={self.delta_estimate:.12g}",
            f"delta_provenance={self.delta_provenance}",
            "sigma_z=" + ",".join("%.12g" % v for v in self.sigma_z),
        ]
        lines += [f"{k}={str(v).lower()}" for k, v in self.conditions.items()]
        lines += [f"{k}={v:.12g}" for k, v in self.details.items()]
        return "\n".join(lines)


def compute_Z(instance: ProblemInstance, X: np.ndarray) -> np.ndarray:
    """Associated point Z = (I - A*A) X + A* b."""
    return associated_point(instance, X)


def _sigma_blocks(sigma: np.ndarray, zero_tol: float) -> list[np.ndarray]:
    """Group indices of equal singular values (zeros form one block)."""
    blocks: list[list[int]] = []
    for i, s in enumerate(sigma):
        if blocks and abs(sigma[blocks[-1][0]] - s) <= zero_tol:
            blocks[-1].append(i)
        else:
            blocks.append([i])
    return [np.array(bl) for bl in blocks]


def _membership_targets(sigma: np.ndarray, reg: Regularizer):
    """Per-coordinate subdifferential of G on sorted non-negative sigma.

    Returns (targets, cap): targets[i] is the exact required value or None
    for coordinates whose admissible set is the interval [-cap_i, cap_i]
    stored in cap[i].
    """
    n = sigma.size
    targets: list[float | None] = [None] * n
    caps = np.zeros(n)
    if isinstance(reg, RankPenalty):
        smu = np.sqrt(reg.mu)
        for i, s in enumerate(sigma):
            if s >= smu:
                targets[i] = float(s)
            elif s > 0.0:
                targets[i] = smu
            else:
                caps[i] = smu
        return targets, caps
    if isinstance(reg, FixedRank):
        k = min(reg.k, n)
        if float(sigma[k:].sum()) == 0.0:
            # rank <= k: head values are pinned, zeros admit [-sigma_k, sigma_k]
            cap = float(sigma[k - 1])
            for i, s in enumerate(sigma):
                if s > 0.0:
                    targets[i] = float(s)
                else:
                    caps[i] = cap
            return targets, caps
        s_star = _indicator_envelope_max_point(sigma, k)
        for i, s in enumerate(sigma):
            if i < k:
                targets[i] = max(s_star, float(s))
            elif s > 0.0:
                targets[i] = s_star
            else:
                caps[i] = s_star
        return targets, caps
    raise TypeError(f"subdifferential membership is not defined for {reg!r}")


def in_subdifferential(query: SubgradientQuery, atol: float | None = None,
                       alignment: str = "strict") -> tuple[bool, float]:
    """Test W in dG(X) for the envelope regularizers.

    Two ingredients, reported as one residual (the max):

    * frame alignment: in the SVD frame of X, W must be block diagonal with
      symmetric blocks on repeated singular values (``values_only`` skips
      this and compares sorted spectra only);
    * per-coordinate membership of the extracted w values in the scalar
      subdifferential, with repeated values compared as sorted multisets
      so the test is invariant to rotations inside a multiple singular
      value.
    """
    if alignment not in ("strict", "values_only"):
        raise ValueError(f"unknown alignment mode {alignment!r}")
    X = np.asarray(query.X, dtype=float)
    W = np.asarray(query.W, dtype=float)
    dec = svd(X)
    n1, n2 = X.shape
    n = min(n1, n2)
    sigma = dec.sigma
    scale = max(1.0, float(np.linalg.norm(X)))
    if atol is None:
        atol = 1e-7 * scale
    zero_tol = 1e-8 * max(float(sigma[0]) if n else 0.0, 1.0)

    targets, caps = _membership_targets(np.where(sigma <= zero_tol, 0.0, sigma),
                                        query.reg)

    if alignment == "values_only":
        # sorted-spectrum comparison: every cap is at most every exact
        # target for these regularizers, so the greedy split is optimal
        w_all = np.sort(np.linalg.svd(W, compute_uv=False))[::-1]
        exact = sorted((t for t in targets if t is not None), reverse=True)
        free_caps = sorted((caps[i] for i in range(n) if targets[i] is None),
                           reverse=True)
        member_res = 0.0
        for w, t in zip(w_all[:len(exact)], exact):
            member_res = max(member_res, abs(w - t))
        for w, cap in zip(w_all[len(exact):], free_caps):
            member_res = max(member_res, max(w - cap - 1e-9, 0.0))
        return member_res <= atol, member_res

    B = dec.U.T @ W @ dec.V
    blocks = _sigma_blocks(sigma, zero_tol)

    align_res = 0.0
    member_res = 0.0
    mask = np.zeros((n1, n2), dtype=bool)
    for bl in blocks:
        if sigma[bl[0]] <= zero_tol:
            # the zero block spans the trailing rows/columns of the frame too
            rows = np.concatenate([bl, np.arange(n, n1)]).astype(int)
            cols = np.concatenate([bl, np.arange(n, n2)]).astype(int)
            sub = B[np.ix_(rows, cols)]
            w_vals = np.sort(np.linalg.svd(sub, compute_uv=False))[::-1]
            mask[np.ix_(rows, cols)] = True
            for i, w in zip(bl, w_vals):
                member_res = max(member_res, max(abs(w) - caps[i] - 1e-9, 0.0)
                                 if targets[i] is None else abs(w - targets[i]))
        else:
            sub = B[np.ix_(bl, bl)]
            sym = 0.5 * (sub + sub.T)
            align_res = max(align_res, float(np.linalg.norm(sub - sym)))
            w_vals = np.sort(np.linalg.eigvalsh(sym))[::-1]
            mask[np.ix_(bl, bl)] = True
            req = np.sort(np.array([targets[i] for i in bl], dtype=float))[::-1]
            member_res = max(member_res, float(np.max(np.abs(w_vals - req))))
    off = B.copy()
    off[mask] = 0.0
    align_res = max(align_res, float(np.linalg.norm(off)))

    residual = max(align_res, member_res)
    return residual <= atol, residual


def check_stationary(instance: ProblemInstance, X: np.ndarray, reg: Regularizer,
                     rho: float = 2.1, tol: float = 1e-6) -> StationarityReport:
    """Two independent stationarity residuals, reported together.

    (a) membership of the associated point in the subdifferential of G,
    (b) the fixed-point residual of one splitting step at weight rho.
    The report passes when both are below tol.
    """
    X = np.asarray(X, dtype=float)
    Z = associated_point(instance, X)
    ok, subdiff_res = in_subdifferential(
        SubgradientQuery(X=X, W=Z, reg=reg), atol=tol)
    op = instance.op
    Xh = X - (2.0 / rho) * op.adjoint(op.apply(X) - instance.b)
    fp_res = float(np.linalg.norm(X - reg_prox_matrix(Xh, reg, rho)))
    return StationarityReport(subdiff_ok=ok, subdiff_residual=subdiff_res,
                              fixed_point_residual=fp_res, tol=tol)


def estimate_delta(op: LinearOp, k: int, restarts: int = 10, seed: int = 0,
                   max_iter: int = 200) -> tuple[float, str]:
    """Lower restricted isometry constant of order k.

    1 - delta_k is the infimum of ||A X||^2 / ||X||_F^2 over nonzero X of
    rank at most k.  For an exact scaled vec-identity the constant is
    1 - c^2 and the provenance is "exact".  Otherwise the quotient is
    minimized by alternating exact smallest-singular-vector steps over the
    two factors of X = L R from random starts; any feasible X only upper
    bounds the infimum, so the returned value is a lower bound on delta
    (provenance "lower_bound") and can refute but never certify.
    """
    c = scaled_identity_factor(op)
    if c is not None:
        return 1.0 - c * c, "exact"

    n1, n2 = op.shape
    k = min(k, n1, n2)
    A3 = op.matrix.reshape(op.m, n2, n1)

    def min_right_vector(M: np.ndarray) -> tuple[np.ndarray, float]:
        _, s, Vh = np.linalg.svd(M, full_matrices=True)
        if M.shape[1] > M.shape[0]:
            return Vh[-1], 0.0
        return Vh[-1], float(s[-1])

    best = np.inf
    for r_idx in range(max(1, restarts)):
        rng = np.random.default_rng(stream_seed(seed, r_idx))
        L = np.linalg.qr(rng.standard_normal((n1, k)))[0]
        ratio_prev = np.inf
        for _ in range(max_iter):
            MR = np.einsum("qji,is->qjs", A3, L).reshape(op.m, n2 * k)
            v, smin = min_right_vector(MR)
            R = v.reshape(k, n2, order="F")
            Q = np.linalg.qr(R.T)[0].T  # orthonormal rows spanning Ran(R^T)
            ML = np.einsum("qji,sj->qsi", A3, Q).reshape(op.m, k * n1)
            v, smin = min_right_vector(ML)
            L_raw = v.reshape(n1, k, order="F")
            ratio = smin * smin
            L = np.linalg.qr(L_raw)[0] if np.linalg.matrix_rank(L_raw) == k \
                else np.linalg.qr(L_raw + 1e-12 * rng.standard_normal((n1, k)))[0]
            if ratio_prev - ratio <= 1e-14 * max(1.0, ratio):
                ratio_prev = ratio
                break
            ratio_prev = ratio
        best = min(best, ratio_prev)
    return 1.0 - best, "lower_bound"


def _interval_band(mu: float, delta: float) -> tuple[float, float]:
    smu = np.sqrt(mu)
    return (1.0 - delta) * smu, smu / (1.0 - delta)


def certify_rank_penalty(instance: ProblemInstance, X: np.ndarray, mu: float,
                         delta2k: float, provenance: str,
                         stat_tol: float = 1e-6) -> CertificateReport:
    """Certificate for a stationary point of the rank-penalty objective.

    A stationary X of rank K is the unique rank <= K minimizer when every
    singular value of its associated point clears the band
    [(1-d) sqrt(mu), sqrt(mu)/(1-d)] with d the order-2K lower isometry
    constant; with operator norm below one and data fit at most mu it is
    the global minimizer of both the penalized and relaxed objectives.
    """
    X = np.asarray(X, dtype=float)
    stat = check_stationary(instance, X, RankPenalty(mu=mu), tol=stat_tol)
    Z = associated_point(instance, X)
    sz = svd(Z).sigma
    details: dict[str, float] = {"mu": mu, "fit": float(
        np.sum((instance.op.apply(X) - instance.b) ** 2))}
    conditions: dict[str, bool] = {}

    usable = 0.0 <= delta2k < 1.0
    if usable:
        lo, hi = _interval_band(mu, delta2k)
        details["band_lo"], details["band_hi"] = lo, hi
        clear = bool(np.all((sz < lo) | (sz > hi)))
    else:
        clear = False
    conditions["spectrum_clears_band"] = clear
    conditions["fit_below_penalty"] = bool(details["fit"] <= mu)
    conditions["operator_norm_below_one"] = bool(instance.op.norm < 1.0)

    if not stat.passed:
        verdict = VERDICT_REFUTED
    elif clear and usable and provenance == "exact":
        if conditions["fit_below_penalty"] and conditions["operator_norm_below_one"]:
            verdict = VERDICT_CERTIFIED_GLOBAL
        else:
            verdict = VERDICT_CERTIFIED_UNIQUE
    else:
        verdict = VERDICT_INCONCLUSIVE

    return CertificateReport(
        stationarity_residual=max(stat.subdiff_residual, stat.fixed_point_residual),
        sigma_z=sz, delta_estimate=delta2k, delta_provenance=provenance,
        conditions=conditions, verdict=verdict, details=details)


def certify_fixed_rank(instance: ProblemInstance, X: np.ndarray, k: int,
                       delta2k: float, provenance: str,
                       stat_tol: float = 1e-6) -> CertificateReport:
    """Certificate for a stationary point of the rank-bound objective.

    With d = order-2k lower isometry constant below one half, a spectral
    gap sigma_{k+1}(Z) < (1 - 2d) sigma_k(Z) rules out any other
    stationary point of rank at most k; with operator norm below one the
    point is the unique global minimizer and no other local minimizers
    exist.
    """
    X = np.asarray(X, dtype=float)
    stat = check_stationary(instance, X, FixedRank(k=k), tol=stat_tol)
    Z = associated_point(instance, X)
    sz = svd(Z).sigma
    s_k = float(sz[k - 1]) if k - 1 < sz.size else 0.0
    s_k1 = float(sz[k]) if k < sz.size else 0.0
    details = {"sigma_k_z": s_k, "sigma_k1_z": s_k1,
               "rank_x": float(rank_from_sigma(svd(X).sigma))}
    usable = delta2k < 0.5
    gap = bool(usable and s_k1 < (1.0 - 2.0 * delta2k) * s_k)
    conditions = {
        "spectral_gap_holds": gap,
        "delta_below_half": bool(usable),
        "operator_norm_below_one": bool(instance.op.norm < 1.0),
    }
    rank_ok = details["rank_x"] <= k

    if not stat.passed:
        verdict = VERDICT_REFUTED
    elif gap and usable and rank_ok and provenance == "exact":
        verdict = VERDICT_CERTIFIED_GLOBAL if instance.op.norm < 1.0 \
            else VERDICT_CERTIFIED_UNIQUE
    else:
        verdict = VERDICT_INCONCLUSIVE

    return CertificateReport(
        stationarity_residual=max(stat.subdiff_residual, stat.fixed_point_residual),
        sigma_z=sz, delta_estimate=delta2k, delta_provenance=provenance,
        conditions=conditions, verdict=verdict, details=details)


@dataclass
class RecoveryReport:
    """A-priori recovery hypotheses and the promised error bound."""

    conditions: dict[str, ConditionCheck]
    error_constant: float

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.conditions.values())

    def to_text(self) -> str:
        lines = [f"error_constant={self.error_constant:.12g}"]
        for name, c in self.conditions.items():
            lines.append(f"{name}={str(c.holds).lower()} "
                         f"(lhs={c.lhs:.6g}, rhs={c.rhs:.6g})")
        return "\n".join(lines)


def check_recovery_conditions(instance: ProblemInstance, reg: Regularizer,
                              delta2k: float,
                              X: np.ndarray | None = None) -> RecoveryReport:
    """Evaluate the noise-level hypotheses of the recovery guarantees.

    Requires ground truth on the instance.  For the rank penalty the noise
    must stay below (1-d)^{3/2} sqrt(mu) / 3 and the k-th singular value of
    the truth above (1/(1-d) + (1-d)) sqrt(mu); for the rank bound the
    signal must exceed 5 / (1-2d)^{3/2} times the noise.  When a solution X
    is supplied, the promised bound ||X - X0|| <= 2 ||eps|| / sqrt(1-d) is
    checked as well.
    """
    if instance.x0 is None:
        raise ValueError("recovery conditions need ground truth on the instance")
    eps = instance.eps if instance.eps is not None \
        else instance.b - instance.op.apply(instance.x0)
    eps_norm = float(np.linalg.norm(eps))
    sig0 = svd(instance.x0).sigma
    k = instance.k0 or rank_from_sigma(sig0)
    s_k = float(sig0[k - 1]) if k - 1 < sig0.size else 0.0
    d = delta2k
    error_constant = 2.0 / np.sqrt(1.0 - d) if d < 1.0 else float("inf")

    conditions: dict[str, ConditionCheck] = {}
    if isinstance(reg, RankPenalty):
        smu = np.sqrt(reg.mu)
        rhs = (1.0 - d) ** 1.5 * smu / 3.0 if d < 1.0 else 0.0
        conditions["noise_small_enough"] = ConditionCheck(
            holds=bool(eps_norm <= rhs), lhs=eps_norm, rhs=rhs)
        floor = (1.0 / (1.0 - d) + (1.0 - d)) * smu if d < 1.0 else float("inf")
        conditions["signal_above_penalty_floor"] = ConditionCheck(
            holds=bool(s_k > floor), lhs=floor, rhs=s_k)
    elif isinstance(reg, FixedRank):
        floor = 5.0 / (1.0 - 2.0 * d) ** 1.5 * eps_norm if d < 0.5 else float("inf")
        conditions["signal_above_noise_floor"] = ConditionCheck(
            holds=bool(s_k > floor), lhs=floor, rhs=s_k)
    elif isinstance(reg, Nuclear):
        raise ValueError("recovery hypotheses cover the two envelope regularizers")

    if X is not None:
        err = float(np.linalg.norm(np.asarray(X, dtype=float) - instance.x0))
        bound = error_constant * eps_norm
        conditions["error_within_bound"] = ConditionCheck(
            holds=bool(err <= bound + 1e-8 * max(1.0, float(np.linalg.norm(instance.x0)))),
            lhs=err, rhs=bound)
    return RecoveryReport(conditions=conditions, error_constant=error_constant)


def stationary_pair_inequality(instance: ProblemInstance, X1: np.ndarray,
                               X2: np.ndarray) -> tuple[float, float]:
    """The two sides of the stationary-pair bound.

    For stationary points with rank(X1) + rank(X2) <= 2k the inner product
    <Z2 - Z1, X2 - X1> is at most delta_2k times ||X2 - X1||^2; returns
    (lhs, ||X2 - X1||^2).
    """
    Z1 = associated_point(instance, np.asarray(X1, dtype=float))
    Z2 = associated_point(instance, np.asarray(X2, dtype=float))
    D = np.asarray(X2, dtype=float) - np.asarray(X1, dtype=float)
    return float(np.sum((Z2 - Z1) * D)), float(np.sum(D * D))
