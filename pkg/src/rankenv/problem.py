"""Measurement operators, problem instances, generators, and file I/O.

Operators are stored densely as an m x (n1*n2) matrix acting on the
column-major vectorization of X.  Problems are normalized to operator norm
0.99 before solving, which keeps every downstream step-size condition a
constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .spectral import TAU_RANK, svd

OP_NORM_TARGET = 0.99


def splitmix64(z: int) -> int:
    """One step of the splitmix64 generator; used to derive seed streams."""
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0xFFFFFFFFFFFFFFFF


def stream_seed(base: int, stream: int) -> int:
    """Deterministic per-stream seed: base XOR splitmix64(stream)."""
    return (int(base) & 0xFFFFFFFFFFFFFFFF) ^ splitmix64(int(stream))


def stream_rng(base: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(base, stream))


@dataclass(frozen=True)
class LinearOp:
    """Dense linear measurement map from n1 x n2 matrices to R^m.

    ``matrix`` has shape (m, n1*n2) and acts on column-major vec(X); ``norm``
    caches the spectral norm of that dense representation.
    """

    matrix: np.ndarray
    shape: tuple[int, int]
    norm: float

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, shape: tuple[int, int]) -> "LinearOp":
        matrix = np.asarray(matrix, dtype=float)
        n1, n2 = shape
        if matrix.ndim != 2 or matrix.shape[1] != n1 * n2:
            raise ValueError(
                f"operator matrix shape {matrix.shape} does not match {shape}")
        norm = float(np.linalg.norm(matrix, 2)) if matrix.size else 0.0
        return cls(matrix=matrix, shape=(int(n1), int(n2)), norm=norm)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != self.shape:
            raise ValueError(f"matrix shape {X.shape} does not match {self.shape}")
        return self.matrix @ X.flatten(order="F")

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise ValueError(f"vector shape {y.shape} does not match ({self.m},)")
        return (self.matrix.T @ y).reshape(self.shape, order="F")

    def scaled(self, c: float) -> "LinearOp":
        return LinearOp(matrix=c * self.matrix, shape=self.shape,
                        norm=abs(c) * self.norm)


def identity_op(n1: int, n2: int, c: float = 1.0) -> LinearOp:
    """The scaled vectorization operator X -> c * vec(X)."""
    return LinearOp(matrix=c * np.eye(n1 * n2), shape=(n1, n2), norm=abs(float(c)))


def scaled_identity_factor(op: LinearOp) -> float | None:
    """Return c when op is exactly c * vec-identity, else None."""
    n1, n2 = op.shape
    if op.m != n1 * n2:
        return None
    d = np.diagonal(op.matrix)
    c = d[0]
    if c == 0.0 or np.any(d != c):
        return None
    off = op.matrix - c * np.eye(n1 * n2)
    return float(c) if not np.any(off) else None


@dataclass(frozen=True)
class ProblemInstance:
    """Measurements b for an operator, with optional ground truth.

    When ground truth is present, b = op(x0) + eps holds exactly by
    construction.  ``scale`` records the factor applied by normalize();
    ``original_param`` the regularizer weight before rescaling.
    """

    op: LinearOp
    b: np.ndarray
    x0: np.ndarray | None = None
    eps: np.ndarray | None = None
    k0: int | None = None
    scale: float = 1.0
    original_param: float | None = None

    def __post_init__(self):
        if self.b.shape != (self.op.m,):
            raise ValueError("b length does not match the operator")


def gen_gaussian_op(m: int, n1: int, n2: int, std: float, seed: int) -> LinearOp:
    """Dense i.i.d. N(0, std^2) operator; deterministic per seed."""
    if min(m, n1, n2) < 1:
        raise ValueError("m, n1, n2 must all be >= 1")
    rng = np.random.default_rng(seed)
    A = std * rng.standard_normal((m, n1 * n2)) if std else np.zeros((m, n1 * n2))
    return LinearOp.from_matrix(A, (n1, n2))


def gen_low_rank(n1: int, n2: int, k: int, std: float, seed: int) -> np.ndarray:
    """Product of n1 x k and k x n2 Gaussian factors; rank k almost surely."""
    if not 1 <= k <= min(n1, n2):
        raise ValueError(f"need 1 <= k <= {min(n1, n2)}, got {k}")
    rng = np.random.default_rng(seed)
    L = std * rng.standard_normal((n1, k))
    R = std * rng.standard_normal((k, n2))
    return L @ R


def gen_instance(op: LinearOp, x0: np.ndarray, seed: int,
                 noise_std: float | None = None,
                 noise_norm: float | None = None,
                 k0: int | None = None) -> ProblemInstance:
    """Measurements b = op(x0) + eps under one of two noise conventions.

    Exactly one of noise_std (i.i.d. entries) or noise_norm (Gaussian
    direction rescaled to that exact norm) must be given.
    """
    if (noise_std is None) == (noise_norm is None):
        raise ValueError("give exactly one of noise_std or noise_norm")
    rng = np.random.default_rng(seed)
    m = op.m
    if noise_std is not None:
        eps = noise_std * rng.standard_normal(m) if noise_std else np.zeros(m)
    else:
        if noise_norm == 0.0:
            eps = np.zeros(m)
        else:
            d = rng.standard_normal(m)
            eps = d * (noise_norm / np.linalg.norm(d))
    b = op.apply(x0) + eps
    if k0 is None:
        k0 = int(np.linalg.matrix_rank(x0, tol=TAU_RANK * max(1.0, float(np.abs(x0).max()))))
    return ProblemInstance(op=op, b=b, x0=np.asarray(x0, dtype=float),
                           eps=eps, k0=k0)


def normalize(instance: ProblemInstance, reg):
    """Rescale the problem so the operator norm is 0.99 when it was >= 1.

    Multiplying the unrelaxed objective by c^2 turns (op, b, weight) into
    (c*op, c*b, c^2*weight) with an identical minimizer set; the rank-bound
    regularizer needs no weight change.  Operators already below norm 1 are
    returned untouched.
    """
    from .envelopes import FixedRank, Nuclear, RankPenalty

    if instance.op.norm == 0.0:
        raise ValueError("cannot normalize the zero operator")
    if instance.op.norm < 1.0:
        return instance, reg
    c = OP_NORM_TARGET / instance.op.norm
    new_op = instance.op.scaled(c)
    inst = replace(instance, op=new_op, b=c * instance.b,
                   eps=None if instance.eps is None else c * instance.eps,
                   scale=c * instance.scale)
    if isinstance(reg, RankPenalty):
        inst = replace(inst, original_param=reg.mu)
        return inst, RankPenalty(mu=reg.mu * c * c)
    if isinstance(reg, Nuclear):
        inst = replace(inst, original_param=reg.lam)
        return inst, Nuclear(lam=reg.lam * c * c)
    if isinstance(reg, FixedRank):
        return inst, reg
    raise TypeError(f"unknown regularizer {reg!r}")


def range_oracle_solution(op: LinearOp, b: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Least-squares solution constrained to the column space of x0.

    Builds an orthonormal basis Q of Ran(x0) and solves the dense least
    squares problem over X = Q C; the minimum-norm solution is returned on
    rank deficiency.
    """
    n1, n2 = op.shape
    dec = svd(np.asarray(x0, dtype=float))
    r = int(np.count_nonzero(dec.sigma > TAU_RANK * max(float(dec.sigma[0]), 1.0)))
    if r == 0:
        return np.zeros((n1, n2))
    Q = dec.U[:, :r]
    # column k + j*r of the reduced system maps C[k, j] to op(Q e_k e_j^T)
    A3 = op.matrix.reshape(op.m, n2, n1)
    M = np.einsum("qji,ik->qjk", A3, Q).reshape(op.m, n2 * r)
    coeff, *_ = np.linalg.lstsq(M, np.asarray(b, dtype=float), rcond=None)
    return Q @ coeff.reshape(r, n2, order="F")


def pathological_instance() -> ProblemInstance:
    """The 2x2 instance whose best rank-1 approximation problem has no solution.

    Measurements pick (x12, x21, x22) and demand (1, 1, 0): products
    [[k, 1], [1, 1/k]] drive the residual to zero as k grows, yet no rank-1
    matrix attains it, and the rank-1 restricted operator has matrices in
    its kernel.
    """
    A = np.zeros((3, 4))
    A[0, 2] = 1.0  # x12 (column-major index 2)
    A[1, 1] = 1.0  # x21
    A[2, 3] = 1.0  # x22
    op = LinearOp.from_matrix(A, (2, 2))
    return ProblemInstance(op=op, b=np.array([1.0, 1.0, 0.0]))


# ---------------------------------------------------------------------------
# File formats (17 significant digits, comma separated, '#' headers).
# ---------------------------------------------------------------------------

def _fmt_row(row: np.ndarray) -> str:
    return ",".join("%.17g" % v for v in row)


def _matrix_lines(X: np.ndarray) -> list[str]:
    return [_fmt_row(row) for row in np.atleast_2d(X)]


def save_matrix(path, X: np.ndarray) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lines = [f"# matrix {X.shape[0]} {X.shape[1]}"] + _matrix_lines(X)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_block(lines: list[str], start: int, rows: int) -> tuple[np.ndarray, int]:
    data = [np.fromstring(lines[start + i], sep=",") for i in range(rows)]
    return np.array(data), start + rows


def load_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[:2] != ["#", "matrix"]:
        raise ValueError(f"{path}: expected '# matrix <rows> <cols>' header")
    rows, cols = int(head[2]), int(head[3])
    X, _ = _parse_block(lines, 1, rows)
    if X.shape != (rows, cols):
        raise ValueError(f"{path}: body shape {X.shape} does not match header")
    return X


def save_operator(path, op: LinearOp) -> None:
    n1, n2 = op.shape
    lines = [f"# operator {op.m} {n1} {n2} column-major"] + _matrix_lines(op.matrix)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_operator(lines: list[str], start: int) -> tuple[LinearOp, int]:
    head = lines[start].split()
    if head[:2] != ["#", "operator"] or head[5:6] != ["column-major"]:
        raise ValueError("expected '# operator <m> <n1> <n2> column-major' header")
    m, n1, n2 = int(head[2]), int(head[3]), int(head[4])
    A, nxt = _parse_block(lines, start + 1, m)
    return LinearOp.from_matrix(A.reshape(m, n1 * n2), (n1, n2)), nxt


def load_operator(path) -> LinearOp:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    op, _ = _parse_operator(lines, 0)
    return op


def save_instance(path, instance: ProblemInstance) -> None:
    n1, n2 = instance.op.shape
    lines = [f"# operator {instance.op.m} {n1} {n2} column-major"]
    lines += _matrix_lines(instance.op.matrix)
    lines.append("# b")
    lines += ["%.17g" % v for v in instance.b]
    if instance.x0 is not None:
        lines.append("# X0")
        lines += _matrix_lines(instance.x0)
    if instance.eps is not None:
        lines.append("# eps")
        lines += ["%.17g" % v for v in instance.eps]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path) -> ProblemInstance:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    op, pos = _parse_operator(lines, 0)
    if lines[pos] != "# b":
        raise ValueError(f"{path}: expected '# b' block")
    b = np.array([float(lines[pos + 1 + i]) for i in range(op.m)])
    pos += 1 + op.m
    x0 = eps = None
    if pos < len(lines) and lines[pos] == "# X0":
        x0, pos = _parse_block(lines, pos + 1, op.shape[0])
    if pos < len(lines) and lines[pos] == "# eps":
        eps = np.array([float(lines[pos + 1 + i]) for i in range(op.m)])
        pos += 1 + op.m
    k0 = None
    if x0 is not None:
        k0 = int(np.linalg.matrix_rank(x0, tol=TAU_RANK * max(1.0, float(np.abs(x0).max()))))
    return ProblemInstance(op=op, b=b, x0=x0, eps=eps, k0=k0)
