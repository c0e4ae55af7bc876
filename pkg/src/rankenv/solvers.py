"""Iterative solvers for  reg(X) + ||A X - b||^2.

``solve_fbs`` is the workhorse: a gradient step on the data term followed
by the regularizer's matrix prox.  ``solve_admm`` splits the two terms with
an explicit consensus constraint.  Both assume the instance has been
normalized (operator norm < 1); they refuse to run otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import envelopes
from .envelopes import FixedRank, Nuclear, RankPenalty, Regularizer
from .problem import LinearOp, ProblemInstance, scaled_identity_factor, stream_seed
from .spectral import rank_from_sigma, svd


@dataclass(frozen=True)
class SolveConfig:
    """Solver settings shared by FBS and ADMM.

    rho is the prox curvature weight; any value > 2 is valid after
    normalization and smaller values take larger steps.
    """

    rho: float = 2.1
    max_iter: int = 10000
    tol: float = 1e-9
    init: np.ndarray | None = None
    algorithm: str = "fbs"
    admm_penalty: float = 3.0

    def __post_init__(self):
        if not self.rho > 2:
            raise ValueError(f"rho must be > 2, got {self.rho}")
        if self.algorithm not in ("fbs", "admm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class SolveResult:
    X: np.ndarray
    Z: np.ndarray
    iterations: int
    converged: bool
    objective_trace: np.ndarray
    fixed_point_residual: float
    rank: int


def _check_normalized(instance: ProblemInstance) -> None:
    if instance.op.norm >= 1.0:
        raise ValueError(
            f"operator norm is {instance.op.norm:.6g} >= 1; "
            "normalize the instance first (problem.normalize)")


def _check_step(instance: ProblemInstance, rho: float) -> None:
    bound = max(2.0, 2.0 * instance.op.norm**2)
    if not rho > bound:
        raise ValueError(f"rho must exceed {bound:.6g} for this operator, got {rho}")


def associated_point(instance: ProblemInstance, X: np.ndarray) -> np.ndarray:
    """The point Z = (I - A*A) X + A* b paired with X by stationarity.

    X is a stationary point of the regularized objective exactly when Z
    lands in the subdifferential checked by the certificates module.
    """
    op = instance.op
    return X - op.adjoint(op.apply(X)) + op.adjoint(instance.b)


def objective_value(instance: ProblemInstance, reg: Regularizer, X: np.ndarray) -> float:
    """Regularized objective: envelope (or nuclear) value plus data fit."""
    r = np.asarray(instance.op.apply(X) - instance.b)
    return envelopes.reg_value_matrix(X, reg) + float(r @ r)


def unrelaxed_objective(instance: ProblemInstance, reg: Regularizer, X: np.ndarray) -> float:
    """Original objective: mu*rank + fit, rank-bound indicator + fit, or nuclear."""
    r = np.asarray(instance.op.apply(X) - instance.b)
    fit = float(r @ r)
    sigma = svd(np.asarray(X, dtype=float)).sigma
    rank = rank_from_sigma(sigma)
    if isinstance(reg, RankPenalty):
        return reg.mu * rank + fit
    if isinstance(reg, FixedRank):
        return fit if rank <= reg.k else float("inf")
    if isinstance(reg, Nuclear):
        return float(reg.lam * sigma.sum()) + fit
    raise TypeError(f"unknown regularizer {reg!r}")


def solve_fbs(instance: ProblemInstance, reg: Regularizer,
              cfg: SolveConfig | None = None) -> SolveResult:
    """Forward-backward splitting from cfg.init (zero by default).

    Iterates  Xh = X - 2 A*(A X - b)/rho  followed by the matrix prox of the
    regularizer at weight rho.  Stops when the iterate moves less than
    tol * max(1, ||X||) in Frobenius norm.  Never raises on non-convergence;
    the result carries the diagnostics.
    """
    cfg = cfg or SolveConfig()
    _check_normalized(instance)
    _check_step(instance, cfg.rho)
    op, b, rho = instance.op, instance.b, cfg.rho
    n1, n2 = op.shape
    X = np.zeros((n1, n2)) if cfg.init is None else np.array(cfg.init, dtype=float)
    if X.shape != (n1, n2):
        raise ValueError(f"init shape {X.shape} does not match {(n1, n2)}")

    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        Xh = X - (2.0 / rho) * op.adjoint(op.apply(X) - b)
        dec = svd(Xh)
        s_new = envelopes.reg_prox_vec(dec.sigma, reg, rho)
        X_new = dec.reconstruct(s_new)
        r = op.apply(X_new) - b
        trace.append(envelopes.reg_value_vec(s_new, reg) + float(r @ r))
        delta = float(np.linalg.norm(X_new - X))
        X = X_new
        if delta <= cfg.tol * max(1.0, float(np.linalg.norm(X_new))):
            converged = True
            break

    Xh = X - (2.0 / rho) * op.adjoint(op.apply(X) - b)
    fp_residual = float(np.linalg.norm(X - envelopes.reg_prox_matrix(Xh, reg, rho)))
    return SolveResult(
        X=X,
        Z=associated_point(instance, X),
        iterations=iterations,
        converged=converged,
        objective_trace=np.array(trace),
        fixed_point_residual=fp_residual,
        rank=rank_from_sigma(svd(X).sigma),
    )


def solve_admm(instance: ProblemInstance, reg: Regularizer,
               cfg: SolveConfig | None = None) -> SolveResult:
    """ADMM on the split  min ||A X - b||^2 + reg(Y)  s.t. X = Y.

    The X update is a cached dense Cholesky solve, the Y update is the
    regularizer prox at weight admm_penalty (which must exceed 2 so the
    envelope proxes stay single valued).  Non-convergence is reported in
    the result, never hidden.
    """
    cfg = cfg or SolveConfig(algorithm="admm")
    _check_normalized(instance)
    tau = float(cfg.admm_penalty)
    if not tau > 2:
        raise ValueError(f"admm_penalty must be > 2 for envelope proxes, got {tau}")
    op, b = instance.op, instance.b
    n1, n2 = op.shape
    N = n1 * n2
    A = op.matrix
    chol = scipy.linalg.cho_factor(2.0 * (A.T @ A) + tau * np.eye(N))
    atb2 = 2.0 * (A.T @ b)

    Y = np.zeros((n1, n2)) if cfg.init is None else np.array(cfg.init, dtype=float)
    U = np.zeros((n1, n2))
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        rhs = atb2 + tau * (Y - U).flatten(order="F")
        X = scipy.linalg.cho_solve(chol, rhs).reshape((n1, n2), order="F")
        Y_new = envelopes.reg_prox_matrix(X + U, reg, tau)
        U = U + X - Y_new
        primal = float(np.linalg.norm(X - Y_new))
        dual = tau * float(np.linalg.norm(Y_new - Y))
        Y = Y_new
        r = op.apply(Y) - b
        trace.append(envelopes.reg_value_matrix(Y, reg) + float(r @ r))
        if max(primal, dual) <= cfg.tol * max(1.0, float(np.linalg.norm(Y))):
            converged = True
            break

    Xh = Y - (2.0 / cfg.rho) * op.adjoint(op.apply(Y) - b)
    fp_residual = float(np.linalg.norm(Y - envelopes.reg_prox_matrix(Xh, reg, cfg.rho)))
    return SolveResult(
        X=Y,
        Z=associated_point(instance, Y),
        iterations=iterations,
        converged=converged,
        objective_trace=np.array(trace),
        fixed_point_residual=fp_residual,
        rank=rank_from_sigma(svd(Y).sigma),
    )


@dataclass
class BisectionResult:
    lam: float
    result: SolveResult
    probes: list = field(default_factory=list)  # (lambda, rank, fit) tuples


def solve_nuclear_bisection(instance: ProblemInstance, k_target: int,
                            bracket: tuple[float, float],
                            cfg: SolveConfig | None = None) -> BisectionResult:
    """Smallest nuclear weight whose solution has rank <= k_target.

    Bisects the bracket down to a width of 1e-3 times its upper end.  Rank
    need not be monotone in the weight, so every probe is logged and the
    returned solution's rank is verified rather than assumed.
    """
    cfg = cfg or SolveConfig()
    lam_lo, lam_hi = float(bracket[0]), float(bracket[1])
    if not 0.0 <= lam_lo < lam_hi:
        raise ValueError(f"invalid bracket {bracket}")
    probes = []

    def probe(lam: float) -> SolveResult:
        res = solve_fbs(instance, Nuclear(lam=lam), cfg)
        r = instance.op.apply(res.X) - instance.b
        probes.append((lam, res.rank, float(r @ r)))
        return res

    if lam_lo > 0.0:
        res_lo = probe(lam_lo)
        if res_lo.rank <= k_target:
            return BisectionResult(lam=lam_lo, result=res_lo, probes=probes)
    res_hi = probe(lam_hi)
    if res_hi.rank > k_target:
        raise ValueError(
            f"rank at the bracket top is {res_hi.rank} > {k_target}; "
            f"probe log: {probes}")
    best_lam, best_res = lam_hi, res_hi
    width_target = 1e-3 * lam_hi
    lo = lam_lo
    while lam_hi - lo > width_target:
        mid = 0.5 * (lo + lam_hi)
        res_mid = probe(mid)
        if res_mid.rank <= k_target:
            lam_hi = mid
            best_lam, best_res = mid, res_mid
        else:
            lo = mid
    if best_res.rank > k_target:
        raise AssertionError("bisection returned an unverified rank")
    return BisectionResult(lam=best_lam, result=best_res, probes=probes)


@dataclass
class RankKResult:
    X: np.ndarray
    residual: float
    blown_up: bool
    restarts_used: int


def best_rank_k(instance: ProblemInstance, k: int, restarts: int = 5,
                seed: int = 0, max_iter: int = 5000,
                blowup_norm: float = 1e6) -> RankKResult:
    """Heuristic minimizer of ||A X - b|| over rank(X) <= k.

    Alternating least squares on X = L R with multiple random restarts;
    the residual is an upper bound on the true minimum, so callers must
    treat the output as a witness, not a certificate.  For scaled
    vec-identity operators the truncated SVD of the reshaped data is
    returned, which is exact.

    Each round adds a safeguarded over-relaxation step on L (accepted only
    when the residual strictly improves), so an infimum that is approached
    along a diverging direction is chased at a geometric rate instead of
    the sqrt(iteration) crawl of plain alternation.  ``blown_up`` flags an
    iterate norm above blowup_norm, the symptom of a best-rank-k problem
    whose minimum is not attained.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    op, b = instance.op, instance.b
    n1, n2 = op.shape
    k = min(k, n1, n2)

    c = scaled_identity_factor(op)
    if c is not None:
        M = (b / c).reshape((n1, n2), order="F")
        dec = svd(M)
        s = dec.sigma.copy()
        s[k:] = 0.0
        X = dec.reconstruct(s)
        return RankKResult(X=X, residual=float(np.linalg.norm(op.apply(X) - b)),
                           blown_up=False, restarts_used=0)

    A3 = op.matrix.reshape(op.m, n2, n1)

    def r_step(L: np.ndarray) -> np.ndarray:
        # columns j*k + s of the system map R[s, j]
        MR = np.einsum("qji,is->qjs", A3, L).reshape(op.m, n2 * k)
        Rv, *_ = np.linalg.lstsq(MR, b, rcond=None)
        return Rv.reshape(k, n2, order="F")

    def l_step(R: np.ndarray) -> np.ndarray:
        # columns s*n1 + i map L[i, s]
        ML = np.einsum("qji,sj->qsi", A3, R).reshape(op.m, k * n1)
        Lv, *_ = np.linalg.lstsq(ML, b, rcond=None)
        return Lv.reshape(n1, k, order="F")

    def fit(L: np.ndarray, R: np.ndarray) -> float:
        return float(np.linalg.norm(op.apply(L @ R) - b))

    best_X, best_residual, blown_any = np.zeros((n1, n2)), np.inf, False
    for r_idx in range(max(1, restarts)):
        rng = np.random.default_rng(stream_seed(seed, r_idx))
        L = rng.standard_normal((n1, k))
        residual = np.inf
        omega = 1.0
        for _ in range(max_iter):
            R = r_step(L)
            L_new = l_step(R)
            new_residual = fit(L_new, r_step(L_new))
            L_acc = L_new + omega * (L_new - L)
            acc_residual = fit(L_acc, r_step(L_acc))
            if acc_residual < new_residual:
                L, new_residual = L_acc, acc_residual
                omega = min(2.0 * omega, 1e8)
            else:
                L = L_new
                omega = max(1.0, 0.5 * omega)
            if float(np.linalg.norm(L @ r_step(L))) > blowup_norm:
                blown_any = True
                residual = new_residual
                break
            if np.isfinite(residual) and \
                    abs(residual - new_residual) <= 1e-12 * max(1.0, residual):
                residual = new_residual
                break
            residual = new_residual
        R = r_step(L)
        X = L @ R
        residual = fit(L, R)
        if residual < best_residual:
            best_X, best_residual = X, residual
    return RankKResult(X=best_X, residual=best_residual, blown_up=blown_any,
                       restarts_used=max(1, restarts))
