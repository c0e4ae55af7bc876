"""Command-line interface.

Subcommands: solve, certify, lrip, sweep-rank, sweep-noise, bias, gen.
Options resolve in three layers: built-in defaults, then an optional
``key = value`` config file, then explicit flags.  Every run prints the
fully resolved configuration so outputs are reproducible from logs alone.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import certificates, experiments, figures, problem, solvers
from .envelopes import FixedRank, Nuclear, RankPenalty
from .experiments import DEFAULT_SEED
from .spectral import numerical_rank


class CliError(Exception):
    """User error with a one-line diagnostic."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def parse_config(text: str, allowed: set[str] | None = None) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' comments; later keys override earlier."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise CliError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        if allowed is not None and key not in allowed:
            raise CliError(f"config line {lineno}: unknown key '{key}'")
        out[key] = value
    return out


def _positive(name: str, value: str) -> float:
    v = float(value)
    if not v > 0:
        raise CliError(f"{name} must be positive, got {value}")
    return v


def _nonneg(name: str, value: str) -> float:
    v = float(value)
    if v < 0:
        raise CliError(f"{name} must be non-negative, got {value}")
    return v


def _posint(name: str, value: str) -> int:
    v = int(value)
    if v < 1:
        raise CliError(f"{name} must be a positive integer, got {value}")
    return v


def _choice(name: str, value: str, options: tuple[str, ...]) -> str:
    if value not in options:
        raise CliError(f"{name} must be one of {'|'.join(options)}, got {value}")
    return value


def _bool(name: str, value) -> bool:
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("1", "true", "yes"):
        return True
    if str(value).lower() in ("0", "false", "no"):
        return False
    raise CliError(f"{name} must be a boolean, got {value}")


# per-subcommand option tables: key -> (converter, default)
_CONVERTERS = {
    "instance": (lambda n, v: str(v), None),
    "op": (lambda n, v: str(v), None),
    "x": (lambda n, v: str(v), None),
    "x0": (lambda n, v: str(v), None),
    "out": (lambda n, v: str(v), None),
    "reg": (lambda n, v: _choice(n, v, ("murank", "fixedrank", "nuclear")), None),
    "mu": (_positive, None),
    "k": (_posint, None),
    "lambda": (_positive, None),
    "rho": (_positive, 2.1),
    "tol": (_positive, 1e-9),
    "max-iter": (_posint, 10000),
    "restarts": (_posint, 5),
    "seed": (lambda n, v: int(v), DEFAULT_SEED),
    "preset": (lambda n, v: _choice(n, v, ("paper-fig1", "paper-fig2", "paper-fig3")), None),
    "scale": (lambda n, v: _choice(n, v, ("desk", "paper")), "desk"),
    "strict": (_bool, False),
    "algorithm": (lambda n, v: _choice(n, v, ("fbs", "admm")), "fbs"),
    "grid-points": (_posint, 100),
    "instances": (_posint, 100),
    "noise-std": (_nonneg, None),
    "noise-norm": (_nonneg, None),
    "m": (_posint, None),
    "n1": (_posint, None),
    "n2": (_posint, None),
    "k0": (_posint, None),
    "op-std": (_nonneg, None),
    "gt-std": (_nonneg, 1.0),
    "config": (lambda n, v: str(v), None),
}

_COMMAND_KEYS = {
    "solve": ("instance", "reg", "mu", "k", "lambda", "rho", "tol", "max-iter",
              "algorithm", "out", "strict", "seed", "config"),
    "certify": ("instance", "x", "reg", "mu", "k", "lambda", "restarts",
                "seed", "config"),
    "lrip": ("instance", "op", "k", "restarts", "seed", "config"),
    "sweep-rank": ("preset", "scale", "seed", "out", "grid-points", "noise-std",
                   "rho", "tol", "max-iter", "strict", "config"),
    "sweep-noise": ("preset", "scale", "seed", "out", "rho", "tol", "max-iter",
                    "strict", "config"),
    "bias": ("preset", "scale", "seed", "out", "instances", "noise-norm",
             "rho", "tol", "max-iter", "strict", "config"),
    "gen": ("scale", "seed", "out", "m", "n1", "n2", "k0", "op-std", "gt-std",
            "noise-std", "noise-norm", "config"),
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="rankenv",
                     description="Low-rank recovery via envelope regularization")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, keys in _COMMAND_KEYS.items():
        p = sub.add_parser(cmd, add_help=True)
        for key in keys:
            if key == "strict":  # bare switch, value optional
                p.add_argument("--strict", dest="strict", nargs="?",
                               const="true", default=None)
            else:
                p.add_argument(f"--{key}", dest=key.replace("-", "__"),
                               default=None)
    return parser


def _resolve(cmd: str, args: argparse.Namespace) -> dict:
    keys = _COMMAND_KEYS[cmd]
    resolved = {}
    for key in keys:
        resolved[key] = _CONVERTERS[key][1]
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        text = Path(cfg_path).read_text(encoding="utf-8")
        for key, value in parse_config(text, allowed=set(keys)).items():
            conv = _CONVERTERS[key][0]
            resolved[key] = conv(key, value)
    for key in keys:
        raw = getattr(args, key.replace("-", "__"))
        if raw is not None:
            resolved[key] = _CONVERTERS[key][0](key, raw)
    return resolved


def _print_config(cmd: str, resolved: dict) -> None:
    print("# resolved configuration")
    print(f"command = {cmd}")
    for key in sorted(resolved):
        if key == "config":
            continue
        print(f"{key} = {resolved[key]}")


def _require(resolved: dict, key: str):
    if resolved.get(key) is None:
        raise CliError(f"--{key} is required")
    return resolved[key]


def _build_reg(resolved: dict):
    kind = _require(resolved, "reg")
    if kind == "murank":
        return RankPenalty(mu=_require(resolved, "mu"))
    if kind == "fixedrank":
        return FixedRank(k=_require(resolved, "k"))
    return Nuclear(lam=_require(resolved, "lambda"))


def _load_instance(resolved: dict) -> problem.ProblemInstance:
    return problem.load_instance(_require(resolved, "instance"))


def _solve_cfg(resolved: dict) -> solvers.SolveConfig:
    return solvers.SolveConfig(rho=resolved["rho"], tol=resolved["tol"],
                               max_iter=resolved["max-iter"],
                               algorithm=resolved.get("algorithm", "fbs"))


def _check_preset(resolved: dict, expected: str) -> None:
    preset = resolved.get("preset")
    if preset is not None and preset != expected:
        raise CliError(f"--preset {preset} does not match this subcommand "
                       f"(expected {expected})")


def _cmd_solve(resolved: dict) -> int:
    inst = _load_instance(resolved)
    reg = _build_reg(resolved)
    inst_n, reg_n = problem.normalize(inst, reg)
    cfg = _solve_cfg(resolved)
    res = (solvers.solve_admm if cfg.algorithm == "admm" else solvers.solve_fbs)(
        inst_n, reg_n, cfg)
    fit = float(np.sum((inst_n.op.apply(res.X) - inst_n.b) ** 2))
    print(f"converged = {str(res.converged).lower()}")
    print(f"iterations = {res.iterations}")
    print(f"rank = {res.rank}")
    print(f"data_fit = {fit:.12g}")
    print(f"fixed_point_residual = {res.fixed_point_residual:.6g}")
    if inst_n.scale != 1.0:
        print(f"normalization_scale = {inst_n.scale:.12g}")
    if resolved.get("out"):
        problem.save_matrix(resolved["out"], res.X)
        print(f"solution written to {resolved['out']}")
    if resolved["strict"] and not res.converged:
        print("error: solver did not converge (--strict)", file=sys.stderr)
        return 2
    return 0


def _cmd_certify(resolved: dict) -> int:
    inst = _load_instance(resolved)
    reg = _build_reg(resolved)
    X = problem.load_matrix(_require(resolved, "x"))
    inst_n, reg_n = problem.normalize(inst, reg)
    if inst_n.scale != 1.0:
        print(f"# instance normalized by {inst_n.scale:.12g}; "
              "the certificate applies to the normalized problem")
        X = np.asarray(X, dtype=float)
    if isinstance(reg_n, Nuclear):
        raise CliError("--reg nuclear has no envelope certificate; "
                       "use murank or fixedrank")
    if isinstance(reg_n, FixedRank):
        k = reg_n.k
    else:
        k = max(1, numerical_rank(X))
    delta, prov = certificates.estimate_delta(
        inst_n.op, 2 * k, restarts=resolved["restarts"], seed=resolved["seed"])
    if isinstance(reg_n, RankPenalty):
        report = certificates.certify_rank_penalty(inst_n, X, reg_n.mu, delta, prov)
    else:
        report = certificates.certify_fixed_rank(inst_n, X, reg_n.k, delta, prov)
    print(report.to_text())
    return 0


def _cmd_lrip(resolved: dict) -> int:
    if resolved.get("op"):
        op = problem.load_operator(resolved["op"])
    elif resolved.get("instance"):
        op = problem.load_instance(resolved["instance"]).op
    else:
        raise CliError("--op or --instance is required")
    k = _require(resolved, "k")
    delta, prov = certificates.estimate_delta(op, k, restarts=resolved["restarts"],
                                              seed=resolved["seed"])
    print(f"delta = {delta:.12g}")
    print(f"provenance = {prov}")
    return 0


def _out_paths(resolved: dict, default_stem: str):
    out = resolved.get("out") or f"{default_stem}.csv"
    stem = Path(out).with_suffix("")
    return Path(out), Path(f"{stem}_curves.csv"), Path(f"{stem}.png")


def _cmd_sweep_rank(resolved: dict) -> int:
    _check_preset(resolved, "paper-fig1")
    setup = experiments.setup_by_name(resolved["scale"], resolved["seed"])
    noise_std = resolved.get("noise-std")
    records = experiments.rank_fit_sweep(
        setup, noise_std=0.1 if noise_std is None else noise_std,
        grid_points=resolved["grid-points"], cfg=_solve_cfg(resolved))
    csv_path, curves_path, png_path = _out_paths(resolved, "rank_fit")
    experiments.write_records_csv(records, csv_path)
    experiments.write_plot_data(records, curves_path, x="rank")
    figures.plot_rank_vs_fit(records, png_path)
    print(f"records written to {csv_path}")
    print(f"curves written to {curves_path}")
    print(f"figure written to {png_path}")
    if resolved["strict"] and not all(r.converged for r in records):
        print("error: some solves did not converge (--strict)", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep_noise(resolved: dict) -> int:
    _check_preset(resolved, "paper-fig2")
    setup = experiments.setup_by_name(resolved["scale"], resolved["seed"])
    records = experiments.noise_sweep(setup, cfg=_solve_cfg(resolved))
    csv_path, curves_path, png_path = _out_paths(resolved, "noise_sweep")
    experiments.write_records_csv(records, csv_path)
    experiments.write_plot_data(records, curves_path, x="noise")
    figures.plot_noise_sweep(records, png_path)
    print(f"records written to {csv_path}")
    print(f"curves written to {curves_path}")
    print(f"figure written to {png_path}")
    if resolved["strict"] and not all(r.converged for r in records):
        print("error: some solves did not converge (--strict)", file=sys.stderr)
        return 2
    return 0


def _cmd_bias(resolved: dict) -> int:
    _check_preset(resolved, "paper-fig3")
    setup = experiments.setup_by_name(resolved["scale"], resolved["seed"])
    noise_norm = resolved.get("noise-norm")
    summary = experiments.bias_study(
        setup, n_instances=resolved["instances"],
        noise_norm=1.0 if noise_norm is None else noise_norm,
        cfg=_solve_cfg(resolved))
    out = Path(resolved.get("out") or "bias.csv")
    png_path = out.with_suffix(".png")
    experiments.write_bias_csv(summary, out)
    figures.plot_bias(summary, png_path, seed=resolved["seed"])
    print(f"summary written to {out}")
    print(f"figure written to {png_path}")
    print(f"coverage_env = {summary.coverage('env'):.4f}")
    print(f"coverage_nuc = {summary.coverage('nuc'):.4f}")
    print(f"mean_abs_bias_env = {summary.mean_abs_bias('env'):.6g}")
    print(f"mean_abs_bias_nuc = {summary.mean_abs_bias('nuc'):.6g}")
    return 0


def _cmd_gen(resolved: dict) -> int:
    if resolved.get("m") is not None or resolved.get("n1") is not None:
        m = _require(resolved, "m")
        n1, n2 = _require(resolved, "n1"), _require(resolved, "n2")
        k0 = _require(resolved, "k0")
        op_std = resolved.get("op-std")
        if op_std is None:
            op_std = 1.0 / np.sqrt(m)
        setup = experiments.ExperimentSetup(m=m, n1=n1, n2=n2, op_std=op_std,
                                            k0=k0, gt_std=resolved["gt-std"],
                                            seed=resolved["seed"])
    else:
        setup = experiments.setup_by_name(resolved["scale"], resolved["seed"])
    noise_std, noise_norm = resolved.get("noise-std"), resolved.get("noise-norm")
    if noise_std is None and noise_norm is None:
        noise_std = 0.1
    if noise_std is not None and noise_norm is not None:
        raise CliError("give only one of --noise-std and --noise-norm")
    op = problem.gen_gaussian_op(setup.m, setup.n1, setup.n2, setup.op_std,
                                 problem.stream_seed(setup.seed, 0))
    x0 = problem.gen_low_rank(setup.n1, setup.n2, setup.k0, setup.gt_std,
                              problem.stream_seed(setup.seed, 1))
    inst = problem.gen_instance(op, x0, problem.stream_seed(setup.seed, 2),
                                noise_std=noise_std, noise_norm=noise_norm,
                                k0=setup.k0)
    out = resolved.get("out") or "instance.csv"
    problem.save_instance(out, inst)
    print(f"instance written to {out}")
    return 0


_HANDLERS = {
    "solve": _cmd_solve,
    "certify": _cmd_certify,
    "lrip": _cmd_lrip,
    "sweep-rank": _cmd_sweep_rank,
    "sweep-noise": _cmd_sweep_noise,
    "bias": _cmd_bias,
    "gen": _cmd_gen,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = _resolve(args.command, args)
        _print_config(args.command, resolved)
        return _HANDLERS[args.command](resolved)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
