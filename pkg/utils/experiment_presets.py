"""
Named experiment presets: success-rate sweeps, relative-error tables,
solver comparison, s-sensitivity and the toy curve sweep.

Desk-scale defaults keep runtimes short; ``full=True`` restores the
original sizes and trial counts.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from utils.sensing_operators import MatrixKind
from utils.sparse_penalty import ConfigError, ParameterError, Regularizer
from utils.sparse_solvers import PENALTY_METHODS, SOLVER_METHODS

# rho per noise regime: (FBS, everything else)
RHO_NOISELESS = (1e-1, 1e-6)
RHO_NOISY = (1.0, 1e-3)
NOISE_LEVEL = 0.01


@dataclass(frozen=True)
class SolverSpec:
    """
    One solver column of an experiment.

    ``s`` defaults to the experiment's s_truth for methods that take a
    sparsity level. ``max_iter`` defaults to 5N.
    """

    name: str
    method: str
    rho: float = 1e-6
    regularizer: Optional[Regularizer] = None
    s: Optional[int] = None
    step: Optional[float] = None
    tol: float = 1e-5
    max_iter: Optional[int] = None
    allow_unsafe_step: bool = False

    def __post_init__(self):
        if self.method not in SOLVER_METHODS:
            raise ParameterError(
                f"unknown solver method {self.method!r}; choose from {', '.join(SOLVER_METHODS)}"
            )
        if self.method in PENALTY_METHODS and self.regularizer is None:
            raise ParameterError(f"solver {self.name} ({self.method}) needs a regularizer")


@dataclass(frozen=True)
class ExperimentConfig:
    config_id: str
    matrix_kind: MatrixKind
    M: int
    N: int
    s_truth: int
    noise: float = 0.0
    solvers: Tuple[SolverSpec, ...] = ()
    trials: int = 10
    master_seed: int = 0
    success_threshold: float = 1e-3
    warm_start_rho: float = 1e-6
    warm_start_iters: Optional[int] = None
    record_wall_time: bool = False
    record_curves: bool = False

    def __post_init__(self):
        object.__setattr__(self, "matrix_kind", MatrixKind(self.matrix_kind))
        if self.trials < 1:
            raise ParameterError(f"trials must be at least 1, got {self.trials}")
        if not self.success_threshold > 0.0:
            raise ParameterError("success threshold must be positive")
        if not 1 <= self.s_truth <= self.N:
            raise ParameterError(f"s_truth must satisfy 1 <= s_truth <= N, got {self.s_truth}")
        if self.noise < 0.0:
            raise ParameterError("noise scale must be nonnegative")
        if not self.solvers:
            raise ParameterError("solver roster is empty")
        names = [spec.name for spec in self.solvers]
        if len(set(names)) != len(names):
            raise ParameterError(f"solver names must be unique, got {names}")


def main_roster(noisy: bool) -> Tuple[SolverSpec, ...]:
    """The seven-column roster of the success-rate and error-table studies."""
    rho_fbs, rho_other = RHO_NOISY if noisy else RHO_NOISELESS
    return (
        SolverSpec("l1_admm", "l1_admm", rho=rho_other),
        SolverSpec("l12_dca", "l12_dca", rho=rho_other),
        SolverSpec("half_threshold", "half_threshold", rho=rho_other),
        SolverSpec("aiht", "aiht", rho=rho_other),
        SolverSpec("sdiff_l1", "fbs", rho=rho_fbs, regularizer=Regularizer.l1()),
        SolverSpec("sdiff_l12", "fbs", rho=rho_fbs, regularizer=Regularizer.l1_minus_al2(1.0)),
        SolverSpec("sdiff_l2", "fbs", rho=rho_fbs, regularizer=Regularizer.l2()),
    )


def comparison_roster(noisy: bool) -> Tuple[SolverSpec, ...]:
    rho_fbs, rho_other = RHO_NOISY if noisy else RHO_NOISELESS
    reg = Regularizer.l1()
    return (
        SolverSpec("dca_admm", "dca_admm", rho=rho_other, regularizer=reg),
        SolverSpec("pdca", "pdca", rho=rho_other, regularizer=reg),
        SolverSpec("fbs", "fbs", rho=rho_fbs, regularizer=reg),
    )


def sensitivity_roster(s: int) -> Tuple[SolverSpec, ...]:
    rho_fbs, rho_other = RHO_NOISELESS
    reg = Regularizer.l1_minus_al2(1.0)
    return (
        SolverSpec("fbs_l12", "fbs", rho=rho_fbs, regularizer=reg, s=s),
        SolverSpec("dca_admm_generalized", "dca_admm_generalized", rho=rho_other, regularizer=reg, s=s),
        SolverSpec("l1_admm", "l1_admm", rho=rho_other),
    )


def with_sparsity(spec: SolverSpec, s: int) -> SolverSpec:
    return replace(spec, s=s)


@dataclass(frozen=True)
class PresetPlan:
    """
    What a preset runs.

    ``study`` is one of sweep, table, comparison, sensitivity, toy.
    """

    name: str
    study: str
    configs: Tuple[ExperimentConfig, ...] = ()
    sparsity_list: Tuple[int, ...] = ()
    s_list: Tuple[int, ...] = ()
    t_grid: Optional[np.ndarray] = field(default=None, compare=False)


def toy_grid(step: float = 0.01, start: float = -2.0, stop: float = 12.0) -> np.ndarray:
    count = int(round((stop - start) / step)) + 1
    return np.round(np.linspace(start, stop, count), 10)


def _ladder(kind: MatrixKind, noisy: bool, full: bool, trials: int, seed: int, prefix: str):
    if full:
        steps = range(1, 5) if noisy else range(1, 9)
    else:
        steps = (1, 2)
    return tuple(
        ExperimentConfig(
            config_id=f"{prefix}-i{i}",
            matrix_kind=kind,
            M=256 * i,
            N=1024 * i,
            s_truth=48 * i,
            noise=NOISE_LEVEL if noisy else 0.0,
            solvers=main_roster(noisy),
            trials=trials,
            master_seed=seed,
            warm_start_rho=(RHO_NOISY if noisy else RHO_NOISELESS)[1],
        )
        for i in steps
    )


PRESET_NAMES = (
    "fig3_gaussian",
    "fig3_dct",
    "table2",
    "table3",
    "table4",
    "table5",
    "table6",
    "fig5",
    "toy",
)


def get_preset(
    name: str,
    full: bool = False,
    trials: Optional[int] = None,
    seed: int = 0,
) -> PresetPlan:
    """
    Build a named preset.

    :param name: one of PRESET_NAMES
    :param full: original sizes and trial counts instead of desk scale
    :param trials: override the preset's trial count
    :param seed: master seed
    :return: PresetPlan
    """
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}")

    if name.startswith("fig3"):
        kind = MatrixKind.GAUSSIAN if name == "fig3_gaussian" else MatrixKind.PARTIAL_DCT
        n_trials = trials or (100 if full else 50)
        sparsities = tuple(range(4, 41, 4)) if full else (8, 16, 24, 32)
        base = ExperimentConfig(
            config_id=name,
            matrix_kind=kind,
            M=64,
            N=256,
            s_truth=sparsities[0],
            solvers=main_roster(noisy=False),
            trials=n_trials,
            master_seed=seed,
        )
        return PresetPlan(name, "sweep", configs=(base,), sparsity_list=sparsities)

    if name in ("table2", "table3", "table4", "table5"):
        kind = MatrixKind.GAUSSIAN if name in ("table2", "table4") else MatrixKind.PARTIAL_DCT
        noisy = name in ("table4", "table5")
        n_trials = trials or (30 if full else 10)
        return PresetPlan(name, "table", configs=_ladder(kind, noisy, full, n_trials, seed, name))

    if name == "table6":
        n_trials = trials or (30 if full else 10)
        configs = []
        for kind in (MatrixKind.GAUSSIAN, MatrixKind.PARTIAL_DCT):
            for noisy in (False, True):
                tag = f"{'gauss' if kind is MatrixKind.GAUSSIAN else 'dct'}-{'noisy' if noisy else 'clean'}"
                configs.append(
                    ExperimentConfig(
                        config_id=f"table6-{tag}",
                        matrix_kind=kind,
                        M=256,
                        N=1024,
                        s_truth=48,
                        noise=NOISE_LEVEL if noisy else 0.0,
                        solvers=comparison_roster(noisy),
                        trials=n_trials,
                        master_seed=seed,
                        warm_start_rho=(RHO_NOISY if noisy else RHO_NOISELESS)[1],
                        record_curves=True,
                    )
                )
        return PresetPlan(name, "comparison", configs=tuple(configs))

    if name == "fig5":
        n_trials = trials or (30 if full else 5)
        s_list = (1, 10, 20, 30, 40, 48, 60, 100, 200, 500, 1000) if full else (16, 32, 48, 96, 192)
        configs = tuple(
            ExperimentConfig(
                config_id=f"fig5-{'gauss' if kind is MatrixKind.GAUSSIAN else 'dct'}",
                matrix_kind=kind,
                M=256,
                N=1024,
                s_truth=48,
                solvers=sensitivity_roster(48),
                trials=n_trials,
                master_seed=seed,
            )
            for kind in (MatrixKind.GAUSSIAN, MatrixKind.PARTIAL_DCT)
        )
        return PresetPlan(name, "sensitivity", configs=configs, s_list=s_list)

    return PresetPlan(name, "toy", t_grid=toy_grid())


def preset_summary(plan: PresetPlan) -> List[str]:
    lines = [f"{plan.name}: {plan.study}"]
    for cfg in plan.configs:
        lines.append(
            f"  {cfg.config_id}: {cfg.matrix_kind.value} {cfg.M}x{cfg.N} "
            f"s_truth={cfg.s_truth} noise={cfg.noise} trials={cfg.trials} "
            f"solvers={[spec.name for spec in cfg.solvers]}"
        )
    return lines
