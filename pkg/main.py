"""
Command-line entry point for the s-difference sparse recovery toolkit.

    python main.py solve --config configs/solve_identity.json --out results/x.txt
    python main.py bench table2 --trials 10
    python main.py toy
    python main.py prox-check --dims 5 --trials 50
    python main.py rho-bound ls-l1 --atb 1 --a2 1 --C 1 --s 1

Exit codes: 0 success, 1 usage/config/parameter error, 2 solver stopped at
max_iter without converging.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from utils.benchmark_runner import (
    BenchmarkRunner,
    relative_error,
    rows_frame,
    run_toy_example,
    run_trial,
    toy_minima,
    write_results,
)
from utils.experiment_presets import (
    PRESET_NAMES,
    ExperimentConfig,
    SolverSpec,
    get_preset,
    toy_grid,
)
from utils.proximal_operators import ProxProblem, prox_gap, prox_oracle, prox_sdiff
from utils.sensing_operators import (
    MatrixKind,
    gen_matrix,
    gen_noise,
    gen_sparse_signal,
    load_matrix,
    make_rng,
    trial_seeds,
)
from utils.sparse_penalty import (
    CapabilityError,
    ConfigError,
    DivergenceError,
    ParameterError,
    Regularizer,
    RegularizerKind,
    SDiffPenalty,
)
from utils.sparse_solvers import (
    BOUND_FORMULAS,
    PENALTY_METHODS,
    SOLVER_METHODS,
    BoundKind,
    LeastSquaresProblem,
    SolverConfig,
    bound_inputs,
    rho_lower_bound,
    solve_with,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

PROX_GAP_TOL = 1e-6
PROX_CHECK_KINDS = (
    RegularizerKind.L1,
    RegularizerKind.L2_SQUARED,
    RegularizerKind.L2,
    RegularizerKind.L1_MINUS_AL2,
    RegularizerKind.MCP,
    RegularizerKind.LSP,
)

_REGULARIZER_FIELDS = ("kind", "a", "theta", "theta1", "theta2")
_SOLVE_FIELDS = ("matrix", "b", "penalty", "solver")
_MATRIX_FIELDS = ("kind", "M", "N", "seed", "file")
_B_FIELDS = ("values", "file", "synthesize")
_SYNTH_FIELDS = ("s_truth", "noise")
_SOLVER_FIELDS = (
    "method",
    "rho",
    "s",
    "step",
    "max_iter",
    "tol",
    "init",
    "adaptive_s",
    "adaptive_epsilon",
    "rho_schedule",
    "allow_unsafe_step",
)
_EXPERIMENT_FIELDS = (
    "config_id",
    "matrix_kind",
    "M",
    "N",
    "s_truth",
    "noise",
    "trials",
    "success_threshold",
    "warm_start_rho",
    "warm_start_iters",
    "record_curves",
    "solvers",
)
_SPEC_FIELDS = ("name", "method", "rho", "penalty", "s", "step", "tol", "max_iter", "allow_unsafe_step")

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"error: {message}\n")


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------


def load_json_config(path: str) -> dict:
    try:
        with open(path, "r") as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e.msg}", line=e.lineno) from e
    if not isinstance(config, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return config


def _section(config: dict, key: str, allowed: Sequence[str], prefix: str = "", required: bool = True):
    path = f"{prefix}{key}"
    if key not in config:
        if required:
            raise ConfigError("missing required field", field=path)
        return None
    section = config[key]
    if not isinstance(section, dict):
        raise ConfigError("expected a JSON object", field=path)
    _check_fields(section, allowed, f"{path}.")
    return section


def _check_fields(section: dict, allowed: Sequence[str], prefix: str = "") -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown field (allowed: {', '.join(allowed)})", field=f"{prefix}{key}")


def _require(section: dict, key: str, prefix: str):
    if key not in section:
        raise ConfigError("missing required field", field=f"{prefix}{key}")
    return section[key]


def parse_regularizer(section: dict, prefix: str) -> Regularizer:
    kind = _require(section, "kind", prefix)
    try:
        kind = RegularizerKind(kind)
    except ValueError as e:
        valid = ", ".join(k.value for k in RegularizerKind)
        raise ConfigError(f"unknown regularizer {kind!r}; choose from {valid}", field=f"{prefix}kind") from e
    params = {key: float(section[key]) for key in _REGULARIZER_FIELDS[1:] if key in section}
    return Regularizer(kind, **params)


def _build_matrix(section: dict, seed: int):
    if "file" in section:
        extra = [key for key in section if key != "file"]
        if extra:
            raise ConfigError("'file' cannot be combined with generator fields", field=f"matrix.{extra[0]}")
        return load_matrix(section["file"])
    kind = _require(section, "kind", "matrix.")
    try:
        kind = MatrixKind(kind)
    except ValueError as e:
        raise ConfigError(f"unknown matrix kind {kind!r}", field="matrix.kind") from e
    N = int(_require(section, "N", "matrix."))
    M = int(section.get("M", N)) if kind is MatrixKind.IDENTITY else int(_require(section, "M", "matrix."))
    matrix_seed = int(section.get("seed", trial_seeds(seed, 0)[0]))
    return gen_matrix(kind, M, N, matrix_seed)


def _build_observations(section: dict, A, seed: int):
    """Return (b, x_true); x_true is None unless b is synthesized."""
    present = [key for key in _B_FIELDS if key in section]
    if len(present) != 1:
        raise ConfigError("exactly one of values, file, synthesize is required", field="b")
    if "values" in section:
        return np.asarray(section["values"], dtype=np.float64), None
    if "file" in section:
        return np.loadtxt(section["file"], ndmin=1), None
    synth = _section(section, "synthesize", _SYNTH_FIELDS, "b.")
    s_truth = int(_require(synth, "s_truth", "b.synthesize."))
    _, seed_signal, seed_noise = trial_seeds(seed, 0)
    x_true = gen_sparse_signal(A.N, s_truth, seed_signal)
    b = A.data @ x_true + gen_noise(A.M, float(synth.get("noise", 0.0)), seed_noise)
    return b, x_true


def _solver_config(section: dict) -> SolverConfig:
    init = section.get("init", "zeros")
    if isinstance(init, list):
        init = np.asarray(init, dtype=np.float64)
    schedule = section.get("rho_schedule")
    return SolverConfig(
        rho=float(_require(section, "rho", "solver.")),
        step=section.get("step"),
        max_iter=section.get("max_iter"),
        tol=float(section.get("tol", 1e-5)),
        init=init,
        adaptive_s=bool(section.get("adaptive_s", False)),
        adaptive_epsilon=section.get("adaptive_epsilon"),
        rho_schedule=tuple(schedule) if schedule is not None else None,
        allow_unsafe_step=bool(section.get("allow_unsafe_step", False)),
    )


def parse_solve_config(config: dict, seed: int, method_override: Optional[str] = None):
    """
    Turn a solve config into library objects.

    :return: (problem, penalty or None, method, SolverConfig, s, x_true or None)
    """
    _check_fields(config, _SOLVE_FIELDS)
    matrix = _section(config, "matrix", _MATRIX_FIELDS)
    observations = _section(config, "b", _B_FIELDS)
    solver = _section(config, "solver", _SOLVER_FIELDS)
    penalty_section = _section(config, "penalty", _REGULARIZER_FIELDS + ("s",), required=False)

    method = method_override or solver.get("method", "fbs")
    if method not in SOLVER_METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(SOLVER_METHODS)}", field="solver.method")

    A = _build_matrix(matrix, seed)
    b, x_true = _build_observations(observations, A, seed)
    prob = LeastSquaresProblem(A, b)

    penalty = None
    if penalty_section is not None:
        penalty = SDiffPenalty(
            parse_regularizer(penalty_section, "penalty."),
            int(_require(penalty_section, "s", "penalty.")),
        )
    elif method in PENALTY_METHODS:
        raise ConfigError(f"method {method} needs a penalty", field="penalty")
    s = solver.get("s", penalty.s if penalty is not None else None)
    if method == "aiht" and s is None:
        raise ConfigError("aiht needs a sparsity level", field="solver.s")
    return prob, penalty, method, _solver_config(solver), s, x_true


def parse_experiment_config(config: dict, seed: int, trials: Optional[int] = None) -> ExperimentConfig:
    """Custom benchmark config (same schema as ExperimentConfig, penalties as objects)."""
    _check_fields(config, _EXPERIMENT_FIELDS)
    entries = _require(config, "solvers", "")
    if not isinstance(entries, list):
        raise ConfigError("expected a list of solver objects", field="solvers")
    specs = []
    for i, entry in enumerate(entries):
        prefix = f"solvers[{i}]."
        if not isinstance(entry, dict):
            raise ConfigError("expected a JSON object", field=f"solvers[{i}]")
        _check_fields(entry, _SPEC_FIELDS, prefix)
        penalty = _section(entry, "penalty", _REGULARIZER_FIELDS, prefix, required=False)
        method = _require(entry, "method", prefix)
        specs.append(
            SolverSpec(
                name=entry.get("name", method),
                method=method,
                rho=float(_require(entry, "rho", prefix)),
                regularizer=parse_regularizer(penalty, f"{prefix}penalty.") if penalty else None,
                s=entry.get("s"),
                step=entry.get("step"),
                tol=float(entry.get("tol", 1e-5)),
                max_iter=entry.get("max_iter"),
                allow_unsafe_step=bool(entry.get("allow_unsafe_step", False)),
            )
        )
    kind = _require(config, "matrix_kind", "")
    try:
        kind = MatrixKind(kind)
    except ValueError as e:
        raise ConfigError(f"unknown matrix kind {kind!r}", field="matrix_kind") from e
    return ExperimentConfig(
        config_id=config.get("config_id", "custom"),
        matrix_kind=kind,
        M=int(_require(config, "M", "")),
        N=int(_require(config, "N", "")),
        s_truth=int(_require(config, "s_truth", "")),
        noise=float(config.get("noise", 0.0)),
        solvers=tuple(specs),
        trials=trials or int(config.get("trials", 10)),
        master_seed=seed,
        success_threshold=float(config.get("success_threshold", 1e-3)),
        warm_start_rho=float(config.get("warm_start_rho", 1e-6)),
        warm_start_iters=config.get("warm_start_iters"),
        record_curves=bool(config.get("record_curves", False)),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _output_dir() -> str:
    return os.getenv("SDIFF_OUTPUT_DIR", "results")


def _select_solvers(cfg: ExperimentConfig, names: Optional[str]) -> ExperimentConfig:
    if not names:
        return cfg
    wanted = [name.strip() for name in names.split(",") if name.strip()]
    solvers = tuple(spec for spec in cfg.solvers if spec.name in wanted)
    if not solvers:
        available = ", ".join(spec.name for spec in cfg.solvers)
        raise ConfigError(f"no solver named {names!r}; available: {available}", field="--solver")
    return replace(cfg, solvers=solvers)


def _solve_preset(args, seed: int) -> int:
    plan = get_preset(args.preset, trials=1, seed=seed)
    if not plan.configs:
        raise ConfigError(f"preset {plan.name} has no trial configuration", field="--preset")
    cfg = _select_solvers(replace(plan.configs[0], trials=1), args.solver)
    result = run_trial(cfg, 0)
    for outcome in result.outcomes:
        print(f"{outcome.solver}: Rel.Err = {outcome.rel_err:.3e} ({outcome.iterations} iterations)")
    out = args.out or os.path.join(_output_dir(), f"{plan.name}_trial0.csv")
    write_results(rows_frame(result.rows(cfg)), out, "csv")
    print(f"Rows written to {out}")
    return EXIT_OK


def cmd_solve(args, seed: int) -> int:
    """Solve one least-squares instance described by a JSON config (or one preset trial)."""
    if args.preset:
        return _solve_preset(args, seed)
    if not args.config:
        raise ConfigError("solve needs --config or --preset", field="--config")
    config = load_json_config(args.config)
    prob, penalty, method, cfg, s, x_true = parse_solve_config(config, seed, args.solver)
    trace = solve_with(method, prob, cfg, penalty=penalty, s=s)

    out = args.out or os.path.join(_output_dir(), "solution.txt")
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    np.savetxt(out, trace.solution, fmt="%.17e")

    report = trace.summary()
    report["seed"] = seed
    report["config"] = args.config
    if penalty is not None:
        report["penalty"] = {**penalty.reg.to_dict(), "s": penalty.s}
    if x_true is not None:
        report["rel_err"] = relative_error(trace.solution, x_true)
    with open(f"{out}.trace.json", "w") as f:
        json.dump(report, f, indent=2)

    print(f"Solution written to {out}")
    print(json.dumps(report, indent=2))
    if not trace.converged:
        logger.warning("%s stopped after %d iterations without converging", method, trace.iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _print_minima(minima: dict) -> None:
    print("Curve minima (grid t):")
    for name, t in minima.items():
        print(f"  {name:>12}: t = {t:g}")


def cmd_toy(args, seed: int) -> int:
    runner = BenchmarkRunner(n_jobs=1, output_dir=args.out)
    table = run_toy_example(toy_grid(step=args.step))
    paths = runner.save_toy(table)
    _print_minima(toy_minima(table))
    print(f"Wrote {len(paths)} files to {runner.output_dir}")
    return EXIT_OK


def cmd_bench(args, seed: int) -> int:
    """Run a named preset or a custom experiment config and write the CSV/JSON artifacts."""
    name = args.name or args.preset
    runner = BenchmarkRunner(output_dir=args.out)
    metadata = {"seed": seed, "full": bool(args.full), "timing": bool(args.timing)}

    if name == "toy":
        return cmd_toy(args, seed)
    if name is not None:
        plan = get_preset(name, full=args.full, trials=args.trials, seed=seed)
        configs = tuple(
            _select_solvers(replace(cfg, record_wall_time=args.timing), args.solver) for cfg in plan.configs
        )
        plan = replace(plan, configs=configs)
        result = runner.run_preset(plan)
        metadata["preset"] = name
        paths = runner.save(result, name, plan, metadata)
    elif args.config:
        cfg = parse_experiment_config(load_json_config(args.config), seed, args.trials)
        cfg = _select_solvers(replace(cfg, record_wall_time=args.timing), args.solver)
        result = runner.run_config(cfg)
        metadata["config"] = args.config
        name = cfg.config_id
        paths = runner.save(result, name, metadata=metadata)
    else:
        raise ConfigError(f"bench needs a preset ({', '.join(PRESET_NAMES)}) or --config", field="preset")

    print(result.summary.to_string(index=False))
    print(f"Wrote {len(paths)} files to {runner.output_dir}")
    return EXIT_OK


def _random_regularizer(kind: RegularizerKind, rng: np.random.Generator) -> Regularizer:
    if kind is RegularizerKind.L1_MINUS_AL2:
        return Regularizer.l1_minus_al2(float(rng.uniform(0.0, 1.0)))
    if kind in (RegularizerKind.MCP, RegularizerKind.LSP):
        return Regularizer(kind, theta=float(rng.uniform(0.1, 3.0)))
    return Regularizer(kind)


def prox_check(dims: int, trials: int, seed: int, budget: int = 4000, inject_fault: bool = False) -> dict:
    """
    Compare every closed-form prox with the numerical oracle.

    :return: {operator name: max relative objective gap}
    """
    if not 1 <= dims <= 8:
        raise ParameterError(f"dims must lie in [1, 8], got {dims}")
    if trials < 1:
        raise ParameterError(f"trials must be at least 1, got {trials}")
    rng = make_rng(seed)
    gaps = {}
    for kind in PROX_CHECK_KINDS:
        worst = 0.0
        for trial in range(trials):
            n = int(rng.integers(2, dims + 1)) if dims >= 2 else 1
            s = int(rng.integers(1, n + 1))
            lam = float(rng.uniform(0.01, 2.0))
            y = 2.0 * rng.standard_normal(n)
            problem = ProxProblem(SDiffPenalty(_random_regularizer(kind, rng), s), lam, y)
            closed = prox_sdiff(problem)
            if inject_fault:
                closed = closed + 0.5
            oracle = prox_oracle(problem, budget=budget, seed=seed + trial)
            worst = max(worst, prox_gap(problem, closed, oracle))
        gaps[f"prox_{kind.value}"] = worst
    return gaps


def cmd_prox_check(args, seed: int) -> int:
    gaps = prox_check(args.dims, args.trials or 50, seed, args.budget, args.inject_fault)
    failed = False
    for name, gap in gaps.items():
        status = "ok" if gap <= PROX_GAP_TOL else "FAIL"
        failed |= gap > PROX_GAP_TOL
        print(f"{name:>12}: max gap = {gap:.3e}  {status}")
    return EXIT_ERROR if failed else EXIT_OK


def cmd_rho_bound(args, seed: int) -> int:
    kind = BoundKind(args.kind)
    inputs = {name: getattr(args, name) for name in bound_inputs(kind)}
    value = rho_lower_bound(kind, **inputs)
    print(f"{kind.value}: rho_bar = {value:.6f}  [{BOUND_FORMULAS[kind]}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="Output path (solve) or directory (bench, toy)")
    common.add_argument("--seed", type=int, help="Master seed (default: SDIFF_SEED or 0)")
    common.add_argument("--trials", type=int, help="Override the trial count")
    common.add_argument("--preset", choices=PRESET_NAMES, help="Named experiment preset")
    common.add_argument("--solver", help="Solver method (solve) or comma-separated roster names (bench)")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = _Parser(description="s-difference sparse recovery toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common], help="Solve one instance")
    solve.set_defaults(handler=cmd_solve)

    bench = sub.add_parser("bench", parents=[common], help="Run an experiment preset")
    bench.add_argument("name", nargs="?", choices=PRESET_NAMES, help="Preset name")
    bench.add_argument("--full", action="store_true", help="Original sizes and trial counts")
    bench.add_argument("--timing", action="store_true", help="Record wall_ms per solver run")
    bench.add_argument("--step", type=float, default=0.01, help=argparse.SUPPRESS)
    bench.set_defaults(handler=cmd_bench)

    toy = sub.add_parser("toy", parents=[common], help="Penalty curves along the toy solution line")
    toy.add_argument("--step", type=float, default=0.01, help="Grid step in t")
    toy.set_defaults(handler=cmd_toy)

    prox = sub.add_parser("prox-check", parents=[common], help="Validate closed-form proxes")
    prox.add_argument("--dims", type=int, default=5, help="Largest dimension N (at most 8)")
    prox.add_argument("--budget", type=int, default=4000, help="Oracle descent budget per instance")
    prox.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    prox.set_defaults(handler=cmd_prox_check)

    rho = sub.add_parser("rho-bound", parents=[common], help="Exact-penalty threshold for rho")
    rho.add_argument("kind", choices=[k.value for k in BoundKind])
    for name in ("beta", "eta", "a", "theta1", "theta2", "atb", "a2", "C", "grad0", "L"):
        rho.add_argument(f"--{name}", type=float)
    rho.add_argument("--s", type=int)
    rho.set_defaults(handler=cmd_rho_bound)
    return parser


def _configure_logging(quiet: bool) -> None:
    level = logging.getLevelName(os.getenv("SDIFF_LOG_LEVEL", "INFO").upper())
    if not isinstance(level, int):
        level = logging.INFO
    if quiet:
        level = max(level, logging.WARNING)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    _configure_logging(args.quiet)
    seed = args.seed if args.seed is not None else int(os.getenv("SDIFF_SEED", "0"))
    try:
        return args.handler(args, seed)
    except (ConfigError, ParameterError, CapabilityError, DivergenceError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
