import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from joblib import Parallel, delayed

from utils.experiment_presets import (
    ExperimentConfig,
    PresetPlan,
    SolverSpec,
    get_preset,
    with_sparsity,
)
from utils.sensing_operators import (
    gen_matrix,
    gen_noise,
    gen_sparse_signal,
    trial_seeds,
)
from utils.sparse_penalty import (
    DivergenceError,
    ParameterError,
    Regularizer,
    SDiffPenalty,
    penalty_eval,
    reg_eval,
)
from utils.sparse_solvers import (
    AdmmConfig,
    LeastSquaresProblem,
    SolverConfig,
    SolveTrace,
    l1_admm_solve,
    solve_with,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "config_id",
    "matrix_kind",
    "M",
    "N",
    "s_truth",
    "noise",
    "solver",
    "trial",
    "rel_err",
    "iterations",
    "wall_ms",
    "success",
]
SORT_KEYS = ["config_id", "trial", "solver"]
FLOAT_FORMAT = "%.16e"


@dataclass(frozen=True)
class SolverOutcome:
    solver: str
    rel_err: float
    iterations: int
    wall_ms: Optional[float]
    success: bool
    curve: Optional[tuple] = None


@dataclass(frozen=True)
class TrialResult:
    config_id: str
    trial: int
    outcomes: tuple

    def rows(self, cfg: ExperimentConfig) -> List[dict]:
        return [
            {
                "config_id": cfg.config_id,
                "matrix_kind": cfg.matrix_kind.value,
                "M": cfg.M,
                "N": cfg.N,
                "s_truth": cfg.s_truth,
                "noise": cfg.noise,
                "solver": outcome.solver,
                "trial": self.trial,
                "rel_err": outcome.rel_err,
                "iterations": outcome.iterations,
                "wall_ms": np.nan if outcome.wall_ms is None else outcome.wall_ms,
                "success": outcome.success,
            }
            for outcome in self.outcomes
        ]


@dataclass
class BenchmarkResult:
    """Trial rows, per-solver summary and optional mean error curves."""

    rows: pd.DataFrame
    summary: pd.DataFrame
    curves: Dict[str, np.ndarray] = field(default_factory=dict)


def relative_error(x, x_true) -> float:
    return float(np.linalg.norm(np.asarray(x) - x_true) / np.linalg.norm(x_true))


def run_solver(
    spec: SolverSpec,
    prob: LeastSquaresProblem,
    x0: np.ndarray,
    default_s: int,
    callback=None,
) -> SolveTrace:
    """
    Run one roster entry from the shared initial point x0.

    :param spec: solver column
    :param prob: least-squares data
    :param x0: initial point
    :param default_s: sparsity level used when the spec leaves ``s`` unset
    :param callback: per-iteration hook callback(k, x)
    :return: SolveTrace
    """
    s = spec.s if spec.s is not None else default_s
    max_iter = spec.max_iter if spec.max_iter is not None else 5 * prob.N
    cfg = SolverConfig(
        rho=spec.rho,
        step=spec.step,
        max_iter=max_iter,
        tol=spec.tol,
        init=x0,
        allow_unsafe_step=spec.allow_unsafe_step,
    )
    penalty = SDiffPenalty(spec.regularizer, s) if spec.regularizer is not None else None
    return solve_with(
        spec.method,
        prob,
        cfg,
        penalty=penalty,
        s=s,
        inner=AdmmConfig(tol=spec.tol, max_iter=max_iter),
        callback=callback,
    )


def build_problem(cfg: ExperimentConfig, trial_index: int):
    """Draw (A, x_true, b) for one trial from its derived seeds."""
    seed_matrix, seed_signal, seed_noise = trial_seeds(cfg.master_seed, trial_index)
    A = gen_matrix(cfg.matrix_kind, cfg.M, cfg.N, seed_matrix)
    x_true = gen_sparse_signal(cfg.N, cfg.s_truth, seed_signal)
    b = A.data @ x_true + gen_noise(cfg.M, cfg.noise, seed_noise)
    return LeastSquaresProblem(A, b), x_true


def run_trial(cfg: ExperimentConfig, trial_index: int) -> TrialResult:
    """
    Generate one instance and run every solver of the roster on it from a
    shared l1-ADMM warm start. A diverging solver is recorded with
    rel_err = inf and the trial continues.
    """
    prob, x_true = build_problem(cfg, trial_index)
    warm_iters = cfg.warm_start_iters if cfg.warm_start_iters is not None else cfg.N
    x0 = l1_admm_solve(prob, cfg.warm_start_rho, warm_iters)
    warm_err = relative_error(x0, x_true)

    outcomes = []
    for spec in cfg.solvers:
        curve = [10.0 * np.log10(max(warm_err, 1e-300))] if cfg.record_curves else None

        def record(k, x, curve=curve):
            curve.append(10.0 * np.log10(max(relative_error(x, x_true), 1e-300)))

        start = time.perf_counter()
        try:
            trace = run_solver(spec, prob, x0, cfg.s_truth, record if curve is not None else None)
            rel_err = relative_error(trace.solution, x_true)
            iterations = trace.iterations
        except DivergenceError as e:
            logger.error("trial %d solver %s diverged: %s", trial_index, spec.name, e)
            rel_err, iterations = float("inf"), e.iteration
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        outcomes.append(
            SolverOutcome(
                solver=spec.name,
                rel_err=rel_err,
                iterations=iterations,
                wall_ms=elapsed_ms if cfg.record_wall_time else None,
                success=bool(rel_err <= cfg.success_threshold),
                curve=tuple(curve) if curve is not None else None,
            )
        )
    logger.info(
        "%s trial %d: %s",
        cfg.config_id,
        trial_index,
        ", ".join(f"{o.solver}={o.rel_err:.3e}" for o in outcomes),
    )
    return TrialResult(cfg.config_id, trial_index, tuple(outcomes))


def rows_frame(rows: Iterable[dict]) -> pd.DataFrame:
    frame = pd.DataFrame(list(rows), columns=CSV_COLUMNS)
    if frame.empty:
        return frame
    frame = frame.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)
    return frame.astype(
        {
            "M": "int64",
            "N": "int64",
            "s_truth": "int64",
            "trial": "int64",
            "iterations": "int64",
            "noise": "float64",
            "rel_err": "float64",
            "wall_ms": "float64",
            "success": "bool",
        }
    )


def summarize(rows: pd.DataFrame, extra_keys: Sequence[str] = ()) -> pd.DataFrame:
    """
    Per config and solver: mean/std of Rel.Err (population std), success
    rate, mean iterations and mean wall time.
    """
    keys = ["config_id", *extra_keys, "solver"]
    columns = [
        *keys,
        "mean_rel_err",
        "std_rel_err",
        "success_rate",
        "mean_iterations",
        "mean_wall_ms",
        "trials",
    ]
    if rows.empty:
        return pd.DataFrame(columns=columns)
    grouped = rows.groupby(keys, sort=True)
    summary = pd.DataFrame(
        {
            "mean_rel_err": grouped["rel_err"].mean(),
            "std_rel_err": grouped["rel_err"].std(ddof=0),
            "success_rate": grouped["success"].mean(),
            "mean_iterations": grouped["iterations"].mean(),
            "mean_wall_ms": grouped["wall_ms"].mean(),
            "trials": grouped["trial"].count(),
        }
    ).reset_index()
    return summary[columns]


def mean_curves(results: Sequence[TrialResult]) -> Dict[str, np.ndarray]:
    """Average Log-Rel.Err per iteration; shorter runs are padded with their last value."""
    collected: Dict[str, List[tuple]] = {}
    for result in results:
        for outcome in result.outcomes:
            if outcome.curve:
                collected.setdefault(outcome.solver, []).append(outcome.curve)
    curves = {}
    for solver, runs in collected.items():
        length = max(len(run) for run in runs)
        padded = np.array([list(run) + [run[-1]] * (length - len(run)) for run in runs])
        curves[solver] = padded.mean(axis=0)
    return curves


def toy_problem():
    """Six-unknown, five-equation system whose solutions are x(t) = (t,t,t,15-3t,20-4t,4t-40)."""
    A = np.array(
        [
            [1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, -1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 2.0, 1.0, 0.0, 0.0],
            [2.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            [0.5, 0.5, 3.0, 0.0, 0.0, -1.0],
        ]
    )
    b = np.array([0.0, 0.0, 15.0, 20.0, 40.0])
    return A, b


def toy_point(t: float) -> np.ndarray:
    return np.array([t, t, t, 15.0 - 3.0 * t, 20.0 - 4.0 * t, 4.0 * t - 40.0])


TOY_SPARSITY = 3
TOY_MCP_THETA = 15.0


def toy_curves() -> Dict[str, Callable[[np.ndarray], float]]:
    base = {
        "l1": Regularizer.l1(),
        "l_half": Regularizer.l_half(),
        "l1-l2": Regularizer.l1_minus_al2(1.0),
        "l1/l2": Regularizer.l1_over_l2(),
        "mcp": Regularizer.mcp(TOY_MCP_THETA),
    }
    sdiff = {
        "sdiff_l1": Regularizer.l1(),
        "sdiff_l2": Regularizer.l2(),
        "sdiff_l1-l2": Regularizer.l1_minus_al2(1.0),
        "sdiff_l1/l2": Regularizer.l1_over_l2(),
        "sdiff_mcp": Regularizer.mcp(TOY_MCP_THETA),
    }
    curves = {name: (lambda x, reg=reg: reg_eval(reg, x)) for name, reg in base.items()}
    for name, reg in sdiff.items():
        penalty = SDiffPenalty(reg, TOY_SPARSITY)
        curves[name] = lambda x, penalty=penalty: penalty_eval(penalty, x)
    return curves


def run_toy_example(t_grid: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Penalty values along x(t) for the ten toy curves; one column per curve."""
    if t_grid is None:
        from utils.experiment_presets import toy_grid

        t_grid = toy_grid()
    t_grid = np.asarray(t_grid, dtype=np.float64)
    curves = toy_curves()
    table = {"t": t_grid}
    for name, fn in curves.items():
        table[name] = np.array([fn(toy_point(t)) for t in t_grid])
    return pd.DataFrame(table)


def toy_minima(table: pd.DataFrame) -> Dict[str, float]:
    """Grid minimizer t of every curve (first occurrence on ties)."""
    return {
        name: float(table["t"].iloc[int(np.argmin(table[name].to_numpy()))])
        for name in table.columns
        if name != "t"
    }


def write_results(results, path: str, fmt: str = "csv", metadata: Optional[dict] = None) -> None:
    """
    Write trial rows sorted by (config, trial, solver).

    CSV floats use 17 significant digits; an empty result writes only the
    header. JSON holds the rows (and summary when given a BenchmarkResult)
    plus ``metadata`` such as the master seed.
    """
    if isinstance(results, BenchmarkResult):
        rows, summary = results.rows, results.summary
    else:
        rows, summary = results, None
    rows = rows_frame(rows.to_dict("records")) if not rows.empty else pd.DataFrame(columns=CSV_COLUMNS)
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        if fmt == "csv":
            rows.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
        elif fmt == "json":
            payload = {"metadata": metadata or {}, "rows": rows.to_dict("records")}
            if summary is not None:
                payload["summary"] = summary.to_dict("records")
            with open(path, "w") as f:
                json.dump(payload, f, indent=2)
        else:
            raise ParameterError(f"unknown results format {fmt!r}; use 'csv' or 'json'")
    except OSError as e:
        raise OSError(f"failed to write results to {path}: {e}") from e


def read_results(path: str) -> pd.DataFrame:
    """Load rows written by ``write_results`` (csv or json by extension)."""
    if path.endswith(".json"):
        with open(path, "r") as f:
            payload = json.load(f)
        return rows_frame(payload.get("rows", []))
    frame = pd.read_csv(path, keep_default_na=True)
    return rows_frame(frame.to_dict("records"))


def write_plot_data(x, y, path: str, x_label: str = "x", y_label: str = "y") -> None:
    """Two-column CSV for external plotting."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    pd.DataFrame({x_label: np.asarray(x), y_label: np.asarray(y)}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )


class BenchmarkRunner:
    def __init__(self, n_jobs: Optional[int] = None, output_dir: Optional[str] = None):
        """
        Seeded experiment runner.

        Args:
            n_jobs (int): Parallel trial workers (default: SDIFF_THREADS or all cores)
            output_dir (str): Artifact directory (default: SDIFF_OUTPUT_DIR or "results")
        """
        logging.basicConfig(
            level=logging.INFO,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )
        self.logger = logging.getLogger(__name__)

        load_dotenv()
        if n_jobs is None:
            threads = os.getenv("SDIFF_THREADS")
            n_jobs = int(threads) if threads else (os.cpu_count() or 1)
        if n_jobs < 1:
            raise ParameterError(f"n_jobs must be at least 1, got {n_jobs}")
        self.n_jobs = n_jobs
        self.output_dir = output_dir or os.getenv("SDIFF_OUTPUT_DIR", "results")

    def run_trials(self, cfg: ExperimentConfig) -> List[TrialResult]:
        """Run all trials of one config; results sorted by trial index."""
        self.logger.info(
            "Running %s: %d trials, %s %dx%d, s_truth=%d, noise=%g",
            cfg.config_id,
            cfg.trials,
            cfg.matrix_kind.value,
            cfg.M,
            cfg.N,
            cfg.s_truth,
            cfg.noise,
        )
        if self.n_jobs == 1 or cfg.trials == 1:
            results = [run_trial(cfg, i) for i in range(cfg.trials)]
        else:
            results = Parallel(n_jobs=min(self.n_jobs, cfg.trials))(
                delayed(run_trial)(cfg, i) for i in range(cfg.trials)
            )
        return sorted(results, key=lambda r: r.trial)

    def run_config(self, cfg: ExperimentConfig) -> BenchmarkResult:
        trials = self.run_trials(cfg)
        rows = rows_frame(row for result in trials for row in result.rows(cfg))
        curves = mean_curves(trials) if cfg.record_curves else {}
        return BenchmarkResult(rows=rows, summary=summarize(rows), curves=curves)

    def _combine(self, results: Sequence[BenchmarkResult], summaries=None) -> BenchmarkResult:
        rows = rows_frame(
            record for result in results for record in result.rows.to_dict("records")
        )
        if summaries is None:
            summary = summarize(rows)
        else:
            summary = pd.concat(summaries, ignore_index=True)
        curves = {}
        for result in results:
            curves.update(result.curves)
        return BenchmarkResult(rows=rows, summary=summary, curves=curves)

    def run_success_rate_sweep(self, cfg: ExperimentConfig, sparsity_list: Sequence[int]) -> BenchmarkResult:
        """
        Success rates per solver for each sparsity level.

        The summary carries an ``s_truth`` column; solvers that take s use
        the ground-truth sparsity.
        """
        results, summaries = [], []
        for k in sparsity_list:
            sub = replace(cfg, config_id=f"{cfg.config_id}-k{k}", s_truth=int(k))
            result = self.run_config(sub)
            summary = result.summary.copy()
            summary.insert(1, "s_truth", int(k))
            results.append(result)
            summaries.append(summary)
        return self._combine(results, summaries)

    def run_relerr_table(self, cfg_list: Sequence[ExperimentConfig]) -> BenchmarkResult:
        """Mean/std Rel.Err rows per config and solver."""
        return self._combine([self.run_config(cfg) for cfg in cfg_list])

    def run_solver_comparison(self, cfg: ExperimentConfig) -> BenchmarkResult:
        """Summary rows plus mean Log-Rel.Err curves (10 log10 Rel.Err) per iteration."""
        return self.run_config(replace(cfg, record_curves=True))

    def run_s_sensitivity(self, cfg: ExperimentConfig, s_list: Sequence[int]) -> BenchmarkResult:
        """Rerun the roster with every s in ``s_list`` (clamped to N)."""
        results, summaries = [], []
        for s in s_list:
            s = int(min(max(s, 1), cfg.N))
            solvers = tuple(
                with_sparsity(spec, s) if spec.s is not None or spec.regularizer is not None else spec
                for spec in cfg.solvers
            )
            sub = replace(cfg, config_id=f"{cfg.config_id}-s{s}", solvers=solvers)
            result = self.run_config(sub)
            summary = result.summary.copy()
            summary.insert(1, "s", s)
            results.append(result)
            summaries.append(summary)
        return self._combine(results, summaries)

    def run_preset(self, plan: PresetPlan) -> BenchmarkResult:
        if plan.study == "sweep":
            return self.run_success_rate_sweep(plan.configs[0], plan.sparsity_list)
        if plan.study == "table":
            return self.run_relerr_table(plan.configs)
        if plan.study == "comparison":
            return self._combine([self.run_solver_comparison(cfg) for cfg in plan.configs])
        if plan.study == "sensitivity":
            parts = [self.run_s_sensitivity(cfg, plan.s_list) for cfg in plan.configs]
            return self._combine(parts, [part.summary for part in parts])
        raise ParameterError(f"preset {plan.name} is not a trial-based study")

    def save(
        self,
        result: BenchmarkResult,
        name: str,
        plan: Optional[PresetPlan] = None,
        metadata: Optional[dict] = None,
    ) -> List[str]:
        """
        Write rows (CSV + JSON), the summary table and plot-data files.

        :return: list of written paths
        """
        paths = []
        rows_path = os.path.join(self.output_dir, f"{name}.csv")
        write_results(result.rows, rows_path, "csv")
        paths.append(rows_path)
        json_path = os.path.join(self.output_dir, f"{name}.json")
        write_results(result, json_path, "json", metadata)
        paths.append(json_path)
        summary_path = os.path.join(self.output_dir, f"{name}_summary.csv")
        result.summary.to_csv(summary_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        paths.append(summary_path)

        for solver, curve in sorted(result.curves.items()):
            path = os.path.join(self.output_dir, f"{name}_curve_{solver}.csv")
            write_plot_data(np.arange(curve.size), curve, path, "iteration", "log_rel_err")
            paths.append(path)
        if plan is not None and plan.study == "sweep":
            for solver, frame in result.summary.groupby("solver", sort=True):
                path = os.path.join(self.output_dir, f"{name}_success_{solver}.csv")
                write_plot_data(frame["s_truth"], frame["success_rate"], path, "s_truth", "success_rate")
                paths.append(path)
        if plan is not None and plan.study == "sensitivity":
            for (config_id, solver), frame in result.summary.assign(
                base=result.summary["config_id"].str.rsplit("-s", n=1).str[0]
            ).groupby(["base", "solver"], sort=True):
                path = os.path.join(self.output_dir, f"{name}_{config_id}_{solver}.csv")
                write_plot_data(frame["s"], frame["mean_rel_err"], path, "s", "mean_rel_err")
                paths.append(path)
        self.logger.info("Wrote %d artifacts to %s", len(paths), self.output_dir)
        return paths

    def save_toy(self, table: pd.DataFrame, name: str = "toy") -> List[str]:
        paths = []
        for column in table.columns:
            if column == "t":
                continue
            safe = column.replace("/", "_over_")
            path = os.path.join(self.output_dir, f"{name}_{safe}.csv")
            write_plot_data(table["t"], table[column], path, "t", "value")
            paths.append(path)
        minima_path = os.path.join(self.output_dir, f"{name}_minima.json")
        os.makedirs(self.output_dir, exist_ok=True)
        with open(minima_path, "w") as f:
            json.dump(toy_minima(table), f, indent=2)
        paths.append(minima_path)
        return paths


if __name__ == "__main__":
    # Example usage
    runner = BenchmarkRunner(n_jobs=1)
    plan = get_preset("fig3_gaussian", trials=2)
    result = runner.run_success_rate_sweep(plan.configs[0], (8,))
    print(result.summary.to_string(index=False))
    print(toy_minima(run_toy_example()))
