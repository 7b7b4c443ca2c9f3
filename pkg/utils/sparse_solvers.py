"""
Solvers for  min_x  1/2 ||A x - b||^2 + rho * P(x).

* ``fbs_solve``       forward-backward splitting with the closed-form prox
* ``pdca_solve``      proximal DCA
* ``dca_admm_solve``  DCA whose convex subproblems are solved by ADMM
* baselines: ``l1_admm_solve``, ``l12_dca_solve``, ``aiht_solve``,
  ``half_threshold_solve``

plus the descent diagnostics, the adaptive-s rule and exact-penalty
thresholds for rho.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from utils.proximal_operators import ProxProblem, has_closed_form, prox_sdiff, shrink
from utils.sensing_operators import SensingMatrix, spectral_norm_sq
from utils.sparse_penalty import (
    CapabilityError,
    DivergenceError,
    ParameterError,
    RegularizerKind,
    SDiffPenalty,
    as_vector,
    l1_weight,
    p2_subgradient,
    penalty_eval,
    penalty_subgradient,
    scalar_value,
    top_mask,
    truncate,
)

logger = logging.getLogger(__name__)

DEFAULT_STEP_FACTOR = 0.99
DEFAULT_TOL = 1e-5
DEFAULT_MAX_OUTER = 20
DESCENT_SLACK = 1e-9
# mu = 10 * rho puts the shrink threshold rho / mu at 0.1 whatever rho is
ADMM_PENALTY_FACTOR = 10.0

Callback = Callable[[int, np.ndarray], None]


@dataclass(frozen=True)
class LeastSquaresProblem:
    """phi(x) = 1/2 ||A x - b||^2 with cached L = ||A||_2^2 and A^T b."""

    A: np.ndarray
    b: np.ndarray
    lipschitz: Optional[float] = None
    atb: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = self.A.data if isinstance(self.A, SensingMatrix) else np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ParameterError(f"A must be a non-empty matrix, got shape {A.shape}")
        b = as_vector(self.b, "b")
        if b.size != A.shape[0]:
            raise ParameterError(f"b has length {b.size}, expected M={A.shape[0]}")
        lipschitz = self.lipschitz if self.lipschitz is not None else spectral_norm_sq(A)
        if not lipschitz > 0.0:
            raise ParameterError("A must be nonzero (Lipschitz constant is 0)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lipschitz", float(lipschitz))
        object.__setattr__(self, "atb", A.T @ b)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    """
    Knobs shared by the iterative solvers.

    ``init`` is "zeros", "l1_admm" (warm start by ``init_iters`` ADMM sweeps,
    N by default, with weight ``init_rho``) or an explicit vector.
    """

    rho: float
    step: Optional[float] = None
    max_iter: Optional[int] = None
    tol: float = DEFAULT_TOL
    init: Union[str, np.ndarray] = "zeros"
    init_iters: Optional[int] = None
    init_rho: float = 1e-6
    adaptive_s: bool = False
    adaptive_epsilon: Optional[float] = None
    rho_schedule: Optional[Tuple[float, ...]] = None
    allow_unsafe_step: bool = False

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ParameterError(f"rho must be positive, got {self.rho}")
        if self.step is not None and not self.step > 0.0:
            raise ParameterError(f"step must be positive, got {self.step}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.tol < 0.0:
            raise ParameterError(f"tol must be nonnegative, got {self.tol}")
        if isinstance(self.init, str) and self.init not in ("zeros", "l1_admm"):
            raise ParameterError(f"unknown init {self.init!r}; use 'zeros', 'l1_admm' or a vector")
        if self.adaptive_epsilon is not None and not self.adaptive_epsilon > 0.0:
            raise ParameterError("adaptive_epsilon must be positive")
        if self.rho_schedule is not None:
            schedule = tuple(float(r) for r in self.rho_schedule)
            if not schedule or any(r <= 0.0 for r in schedule):
                raise ParameterError("rho_schedule must be a non-empty list of positive values")
            if any(b <= a for a, b in zip(schedule, schedule[1:])):
                raise ParameterError("rho_schedule must be strictly increasing")
            object.__setattr__(self, "rho_schedule", schedule)


@dataclass(frozen=True)
class AdmmConfig:
    """
    Inner scaled-ADMM settings.

    ``mu`` defaults to ADMM_PENALTY_FACTOR * rho and ``max_iter`` to 5N. A
    subproblem stops once both the change of the sparse iterate and the
    primal residual, relative to max(||v||, 1), fall below ``tol``.
    """

    mu: Optional[float] = None
    tol: float = 1e-8
    max_iter: Optional[int] = None
    max_outer: int = DEFAULT_MAX_OUTER

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0.0:
            raise ParameterError(f"ADMM penalty mu must be positive, got {self.mu}")
        if self.tol < 0.0:
            raise ParameterError(f"ADMM tol must be nonnegative, got {self.tol}")
        if self.max_outer < 1:
            raise ParameterError("max_outer must be at least 1")


def admm_penalty(rho: float, mu: Optional[float] = None) -> float:
    """ADMM penalty: ``mu`` when given, else ADMM_PENALTY_FACTOR * rho (1.0 for rho = 0)."""
    if mu is not None:
        return mu
    return ADMM_PENALTY_FACTOR * rho if rho > 0.0 else 1.0


@dataclass(frozen=True)
class SolveTrace:
    solution: np.ndarray
    objective_history: Tuple[float, ...]
    step_norm_history: Tuple[float, ...]
    iterations: int
    converged: bool
    fixed_point_residual: float = float("nan")
    s_history: Tuple[int, ...] = ()
    solver: str = ""
    # steps per continuation stage; each stage records its own starting objective
    stage_lengths: Tuple[int, ...] = ()

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_objective": self.objective_history[-1] if self.objective_history else None,
            "fixed_point_residual": self.fixed_point_residual,
            "final_s": self.s_history[-1] if self.s_history else None,
        }


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


def ls_loss(prob: LeastSquaresProblem, x: np.ndarray) -> float:
    r = prob.A @ x - prob.b
    return 0.5 * float(r @ r)


def ls_gradient(prob: LeastSquaresProblem, x) -> np.ndarray:
    """grad phi(x) = A^T (A x - b)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != prob.N:
        raise ParameterError(f"x has shape {x.shape}, expected ({prob.N},)")
    return prob.A.T @ (prob.A @ x - prob.b)


def objective(prob: LeastSquaresProblem, penalty: SDiffPenalty, rho: float, x) -> float:
    """F(x) = phi(x) + rho * P(x)."""
    return ls_loss(prob, x) + rho * penalty_eval(penalty, x)


def _resolve_step(prob: LeastSquaresProblem, cfg: SolverConfig) -> float:
    step = cfg.step if cfg.step is not None else DEFAULT_STEP_FACTOR / prob.lipschitz
    if step * prob.lipschitz >= 1.0 and not cfg.allow_unsafe_step:
        raise ParameterError(
            f"step {step:g} violates step * L < 1 (L = {prob.lipschitz:g}); "
            "set allow_unsafe_step to run without the descent guarantee"
        )
    return step


def _resolve_max_iter(prob: LeastSquaresProblem, cfg: SolverConfig) -> int:
    return cfg.max_iter if cfg.max_iter is not None else 5 * prob.N


def initial_point(prob: LeastSquaresProblem, cfg: SolverConfig) -> np.ndarray:
    if isinstance(cfg.init, str):
        if cfg.init == "zeros":
            return np.zeros(prob.N)
        iters = cfg.init_iters if cfg.init_iters is not None else prob.N
        return l1_admm_solve(prob, cfg.init_rho, iters)
    x0 = as_vector(cfg.init, "init")
    if x0.size != prob.N:
        raise ParameterError(f"init has length {x0.size}, expected N={prob.N}")
    return x0.copy()


def _check_finite(x: np.ndarray, iteration: int, cfg, solver: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(iteration, cfg, solver)


def _relative_step(x_new: np.ndarray, x_old: np.ndarray) -> Tuple[float, float]:
    d = float(np.linalg.norm(x_new - x_old))
    return d, d / max(float(np.linalg.norm(x_new)), 1.0)


def fixed_point_residual(
    prob: LeastSquaresProblem, penalty: SDiffPenalty, rho: float, step: float, x
) -> float:
    """||x - prox_{step*rho*P}(x - step * grad phi(x))||_2."""
    x = np.asarray(x, dtype=np.float64)
    y = x - step * ls_gradient(prob, x)
    if not np.all(np.isfinite(y)):
        return float("inf")
    return float(np.linalg.norm(x - prox_sdiff(ProxProblem(penalty, step * rho, y))))


# ---------------------------------------------------------------------------
# Forward-backward splitting
# ---------------------------------------------------------------------------


def adaptive_s_update(x_curr, x_prev, s_prev: int, epsilon: float) -> int:
    """
    Count the entries of |x_curr| at or above min(|x_prev|_(s_prev), epsilon),
    where |x_prev|_(k) is the k-th largest magnitude; clamped to [1, N].
    """
    x_curr = np.abs(np.asarray(x_curr, dtype=np.float64))
    x_prev = np.abs(np.asarray(x_prev, dtype=np.float64))
    n = x_curr.size
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not 1 <= s_prev <= n:
        raise ParameterError(f"s_prev must satisfy 1 <= s_prev <= N={n}, got {s_prev}")
    ranked = np.sort(x_prev)[::-1]
    threshold = min(float(ranked[s_prev - 1]), epsilon)
    count = int(np.count_nonzero((x_curr >= threshold) & (x_curr > 0.0)))
    return min(max(count, 1), n)


def fbs_solve(
    prob: LeastSquaresProblem,
    penalty: SDiffPenalty,
    cfg: SolverConfig,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """
    Forward-backward splitting x+ = prox_{beta*rho*P}(x - beta * grad phi(x)).

    Stops when ||x+ - x|| / max(||x+||, 1) < tol or after max_iter steps.
    With ``cfg.rho_schedule`` the solve runs as a warm-started continuation.

    :param prob: least-squares data
    :param penalty: s-difference penalty with a closed-form prox
    :param cfg: solver configuration
    :param callback: called as callback(k, x) after every iteration
    :return: SolveTrace
    """
    if cfg.rho_schedule is not None:
        return continuation_solve(prob, penalty, cfg, callback)
    penalty.check_dimension(prob.N)
    if not has_closed_form(penalty):
        raise CapabilityError(
            f"FBS needs a closed-form prox; {penalty.reg.kind.value} has none (use dca_admm_solve)"
        )
    step = _resolve_step(prob, cfg)
    max_iter = _resolve_max_iter(prob, cfg)
    rho = cfg.rho
    lam = step * rho

    x = initial_point(prob, cfg)
    current = penalty
    epsilon = None
    if cfg.adaptive_s:
        scale = float(np.max(np.abs(x)))
        epsilon = cfg.adaptive_epsilon or 1e-3 * (scale if scale > 0.0 else 1.0)

    history = [objective(prob, current, rho, x)]
    steps = []
    s_history = [current.s]
    converged = False
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iter + 1):
            y = x - step * ls_gradient(prob, x)
            _check_finite(y, k, cfg, "fbs")
            x_new = prox_sdiff(ProxProblem(current, lam, y))
            _check_finite(x_new, k, cfg, "fbs")
            d, rel = _relative_step(x_new, x)
            steps.append(d)
            if epsilon is not None:
                current = current.with_s(adaptive_s_update(x_new, x, current.s, epsilon))
                s_history.append(current.s)
            x = x_new
            history.append(objective(prob, current, rho, x))
            if callback is not None:
                callback(k, x)
            logger.debug("fbs iter %d: F=%.10e step=%.3e s=%d", k, history[-1], d, current.s)
            if rel < cfg.tol:
                converged = True
                break

    residual = fixed_point_residual(prob, current, rho, step, x)
    logger.info(
        "fbs finished: iterations=%d converged=%s F=%.6e", k, converged, history[-1]
    )
    return SolveTrace(
        solution=x,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        iterations=k,
        converged=converged,
        fixed_point_residual=residual,
        s_history=tuple(s_history),
        solver="fbs",
    )


def continuation_solve(
    prob: LeastSquaresProblem,
    penalty: SDiffPenalty,
    cfg: SolverConfig,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """
    FBS along an increasing rho schedule, each stage warm-started from the
    previous solution. Histories are concatenated stage by stage, so the
    objective history holds one starting value per stage; ``stage_lengths``
    records where the stages split and ``converged`` reports the last stage.
    """
    schedule = cfg.rho_schedule or (cfg.rho,)
    x0 = cfg.init
    history, steps, s_history = [], [], []
    stage_lengths = []
    iterations = 0
    trace = None
    for rho in schedule:
        stage_cfg = replace(cfg, rho=rho, rho_schedule=None, init=x0)
        offset = iterations

        def stage_callback(k, x, offset=offset):
            if callback is not None:
                callback(offset + k, x)

        trace = fbs_solve(prob, penalty, stage_cfg, stage_callback)
        history.extend(trace.objective_history)
        steps.extend(trace.step_norm_history)
        s_history.extend(trace.s_history)
        iterations += trace.iterations
        stage_lengths.append(len(trace.step_norm_history))
        x0 = trace.solution
        logger.info("continuation stage rho=%g: P(x)=%.3e", rho, penalty_eval(penalty, x0))
    return replace(
        trace,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        s_history=tuple(s_history),
        iterations=iterations,
        solver="fbs-continuation",
        stage_lengths=tuple(stage_lengths),
    )


def check_descent_bound(trace: SolveTrace, L: float, beta: float, slack: Optional[float] = None) -> bool:
    """
    Check the two FBS descent guarantees on a recorded trace.

    (i)  F_{k+1} - F_k <= (L/2 - 1/(2 beta)) d_k^2 for every step, and
    (ii) min_{k<=K} d_k^2 <= 2 beta (F_0 - F_{K+1}) / (K (1 - L beta)) for every K >= 1,

    where d_k = ||x_{k+1} - x_k|| and F_0 is the objective at the initial
    iterate (F(0) for a zero start). Continuation traces are checked stage by
    stage, each against the objective at its own starting point.
    """
    F = np.asarray(trace.objective_history, dtype=np.float64)
    d = np.asarray(trace.step_norm_history, dtype=np.float64)
    if len(d) == 0:
        return True
    stages = trace.stage_lengths or (len(d),)
    if sum(stages) != len(d) or len(F) != len(d) + len(stages):
        raise ParameterError("trace histories are inconsistent")
    f_start = d_start = 0
    for n in stages:
        if not _stage_descent(F[f_start : f_start + n + 1], d[d_start : d_start + n], L, beta, slack):
            return False
        f_start += n + 1
        d_start += n
    return True


def _stage_descent(F: np.ndarray, d: np.ndarray, L: float, beta: float, slack: Optional[float]) -> bool:
    if len(d) == 0:
        return True
    tol = slack if slack is not None else DESCENT_SLACK * max(1.0, abs(F[0]))
    coeff = L / 2.0 - 1.0 / (2.0 * beta)
    for k in range(len(d)):
        if F[k + 1] - F[k] > coeff * d[k] ** 2 + tol:
            return False
    if L * beta >= 1.0:
        return bool(np.all(d == 0.0))
    running_min = d[0] ** 2
    for K in range(1, len(d)):
        running_min = min(running_min, d[K] ** 2)
        bound = 2.0 * beta * (F[0] - F[K + 1]) / (K * (1.0 - L * beta))
        if running_min > bound + tol:
            return False
    return True


def refined_descent_delta(x_prev, x_next, penalty: SDiffPenalty) -> float:
    """
    Delta_k = sum_{i in L_{k+1}} r(x_prev_i) - sum_{i in L_k} r(x_prev_i), where
    L_k is the complement of the top-s set of x_prev and L_{k+1} that of x_next.
    """
    if not penalty.reg.is_separable:
        raise CapabilityError(f"{penalty.reg.kind.value} is not separable")
    x_prev = as_vector(x_prev, "x_prev")
    x_next = as_vector(x_next, "x_next")
    if x_prev.size != x_next.size:
        raise ParameterError("iterates have different dimensions")
    terms = scalar_value(penalty.reg, x_prev)
    rest_prev = ~top_mask(x_prev, penalty.s)
    rest_next = ~top_mask(x_next, penalty.s)
    return float(np.sum(terms[rest_next]) - np.sum(terms[rest_prev]))


# ---------------------------------------------------------------------------
# DCA family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexSplit:
    """
    P = G - Q with G prox-friendly and convex. ``prox(v, t)`` is the prox of
    t * G and ``linear(x)`` returns an element of dQ(x).
    """

    prox: Callable[[np.ndarray, float], np.ndarray]
    linear: Callable[[np.ndarray], np.ndarray]


def _block_shrink(v: np.ndarray, t: float) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm <= t:
        return np.zeros_like(v)
    return (1.0 - t / norm) * v


def convex_split(penalty: SDiffPenalty, generalized: bool = False) -> ConvexSplit:
    """
    Choose the convex part handled by the subproblem.

    The exact split keeps G = P1 when its prox is elementary (L1, L2Squared,
    L2). The generalized split keeps G = c ||x||_1 and moves everything else
    into Q (which may be nonconvex), so every kind with an l1 part works.
    """
    reg = penalty.reg
    kind = reg.kind

    def exact_linear(x):
        return p2_subgradient(penalty, x)

    if generalized and kind not in (RegularizerKind.L2, RegularizerKind.L2_SQUARED):
        c = l1_weight(reg)

        def linear(x):
            return c * np.sign(x) - penalty_subgradient(penalty, x)

        return ConvexSplit(prox=lambda v, t: shrink(v, c * t), linear=linear)
    if kind is RegularizerKind.L1:
        return ConvexSplit(prox=lambda v, t: shrink(v, t), linear=exact_linear)
    if kind is RegularizerKind.L2_SQUARED:
        return ConvexSplit(prox=lambda v, t: v / (1.0 + 2.0 * t), linear=exact_linear)
    if kind is RegularizerKind.L2:
        return ConvexSplit(prox=_block_shrink, linear=exact_linear)
    raise CapabilityError(
        f"the convex part of {kind.value} has no elementary prox; use generalized=True"
    )


class _RidgeSolver:
    """Solves (A^T A + mu I) x = q with one Cholesky factorization."""

    def __init__(self, A: np.ndarray, mu: float):
        self.A = A
        self.mu = mu
        M, N = A.shape
        self.tall = M >= N
        if self.tall:
            self.factor = cho_factor(A.T @ A + mu * np.eye(N))
        else:
            # Woodbury: factor the smaller M x M system A A^T + mu I
            self.factor = cho_factor(A @ A.T + mu * np.eye(M))

    def solve(self, q: np.ndarray) -> np.ndarray:
        if self.tall:
            return cho_solve(self.factor, q)
        return (q - self.A.T @ cho_solve(self.factor, self.A @ q)) / self.mu


def _admm_subproblem(
    ridge: _RidgeSolver,
    atb: np.ndarray,
    linear_term: np.ndarray,
    prox: Callable[[np.ndarray, float], np.ndarray],
    rho: float,
    v: np.ndarray,
    u: np.ndarray,
    inner: AdmmConfig,
    max_iter: int,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Scaled ADMM for min 1/2||Ax-b||^2 - <linear_term, x> + rho * G(x),
    continued from the state (v, u).

    Returns the sparse (v) iterate, the scaled dual and the number of sweeps.
    """
    mu = ridge.mu
    rhs_fixed = atb + linear_term
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        x = ridge.solve(rhs_fixed + mu * (v - u))
        v_old = v
        v = prox(x + u, rho / mu)
        u = u + x - v
        scale = max(float(np.linalg.norm(v)), 1.0)
        change = float(np.linalg.norm(v - v_old)) / scale
        primal = float(np.linalg.norm(x - v)) / scale
        if change < inner.tol and primal < inner.tol:
            break
    return v, u, sweeps


def _dca_admm_loop(
    prob: LeastSquaresProblem,
    rho: float,
    split: ConvexSplit,
    objective_fn: Callable[[np.ndarray], float],
    cfg: SolverConfig,
    inner: AdmmConfig,
    callback: Optional[Callback],
    name: str,
) -> Tuple[np.ndarray, list, list, int, bool]:
    inner_max = inner.max_iter if inner.max_iter is not None else 5 * prob.N
    ridge = _RidgeSolver(prob.A, admm_penalty(rho, inner.mu))
    x = initial_point(prob, cfg)
    # the scaled dual carries over between outer steps
    u = np.zeros_like(x)
    history = [objective_fn(x)]
    steps = []
    converged = False
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, inner.max_outer + 1):
            w = split.linear(x)
            x_new, u, sweeps = _admm_subproblem(
                ridge, prob.atb, rho * w, split.prox, rho, x, u, inner, inner_max
            )
            _check_finite(x_new, k, cfg, name)
            d, rel = _relative_step(x_new, x)
            steps.append(d)
            x = x_new
            history.append(objective_fn(x))
            if callback is not None:
                callback(k, x)
            logger.debug("%s outer %d: F=%.10e inner sweeps=%d", name, k, history[-1], sweeps)
            if rel < cfg.tol:
                converged = True
                break
    logger.info("%s finished: outer iterations=%d converged=%s F=%.6e", name, k, converged, history[-1])
    return x, history, steps, k, converged


def dca_admm_solve(
    prob: LeastSquaresProblem,
    penalty: SDiffPenalty,
    cfg: SolverConfig,
    inner: AdmmConfig = AdmmConfig(),
    generalized: bool = False,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """
    DCA: at each outer step linearize Q at x_k (w in dQ(x_k)) and solve
        min 1/2||Ax-b||^2 - rho <w, x> + rho * G(x)
    by scaled ADMM with x-update (A^T A + mu I) x = A^T b + rho w + mu (v - u).

    :param prob: least-squares data
    :param penalty: s-difference penalty
    :param cfg: outer stopping rule and initialization
    :param inner: ADMM settings (mu, residual tolerance, sweep cap, outer cap)
    :param generalized: use the l1 split G = c||x||_1 instead of G = P1
    :param callback: called as callback(k, x) after every outer iteration
    """
    penalty.check_dimension(prob.N)
    split = convex_split(penalty, generalized)
    rho = cfg.rho
    name = "dca_admm_generalized" if generalized else "dca_admm"
    x, history, steps, k, converged = _dca_admm_loop(
        prob, rho, split, lambda z: objective(prob, penalty, rho, z), cfg, inner, callback, name
    )
    residual = float("nan")
    if has_closed_form(penalty):
        residual = fixed_point_residual(prob, penalty, rho, DEFAULT_STEP_FACTOR / prob.lipschitz, x)
    return SolveTrace(
        solution=x,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        iterations=k,
        converged=converged,
        fixed_point_residual=residual,
        s_history=(penalty.s,),
        solver=name,
    )


def pdca_solve(
    prob: LeastSquaresProblem,
    penalty: SDiffPenalty,
    cfg: SolverConfig,
    generalized: bool = False,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """
    Proximal DCA:
        x+ = prox_{(rho/L) G}(x - (grad phi(x) - rho w) / L),  w in dQ(x).
    """
    penalty.check_dimension(prob.N)
    split = convex_split(penalty, generalized)
    L = prob.lipschitz
    rho = cfg.rho
    max_iter = _resolve_max_iter(prob, cfg)
    x = initial_point(prob, cfg)
    history = [objective(prob, penalty, rho, x)]
    steps = []
    converged = False
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iter + 1):
            w = split.linear(x)
            v = x - (ls_gradient(prob, x) - rho * w) / L
            x_new = split.prox(v, rho / L)
            _check_finite(x_new, k, cfg, "pdca")
            d, rel = _relative_step(x_new, x)
            steps.append(d)
            x = x_new
            history.append(objective(prob, penalty, rho, x))
            if callback is not None:
                callback(k, x)
            if rel < cfg.tol:
                converged = True
                break
    logger.info("pdca finished: iterations=%d converged=%s F=%.6e", k, converged, history[-1])
    residual = float("nan")
    if has_closed_form(penalty):
        residual = fixed_point_residual(prob, penalty, rho, DEFAULT_STEP_FACTOR / L, x)
    return SolveTrace(
        solution=x,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        iterations=k,
        converged=converged,
        fixed_point_residual=residual,
        s_history=(penalty.s,),
        solver="pdca",
    )


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def l1_admm_solve(
    prob: LeastSquaresProblem, rho: float, iters: int, mu: Optional[float] = None
) -> np.ndarray:
    """
    Lasso 1/2||Ax-b||^2 + rho ||x||_1 by scaled ADMM.

    The penalty ``mu`` defaults to ADMM_PENALTY_FACTOR * rho. Runs exactly
    ``iters`` sweeps and returns the shrunk iterate.
    """
    if rho < 0.0:
        raise ParameterError(f"rho must be nonnegative, got {rho}")
    if iters < 1:
        raise ParameterError(f"iters must be at least 1, got {iters}")
    mu = admm_penalty(rho, mu)
    if not mu > 0.0:
        raise ParameterError(f"ADMM penalty mu must be positive, got {mu}")
    ridge = _RidgeSolver(prob.A, mu)
    v = np.zeros(prob.N)
    u = np.zeros(prob.N)
    for _ in range(iters):
        x = ridge.solve(prob.atb + mu * (v - u))
        v = shrink(x + u, rho / mu)
        u = u + x - v
    return v


def l12_dca_solve(
    prob: LeastSquaresProblem,
    rho: float,
    cfg: SolverConfig,
    inner: AdmmConfig = AdmmConfig(),
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """DCA for 1/2||Ax-b||^2 + rho (||x||_1 - ||x||_2) with w = x / ||x||_2."""

    def linear(x):
        norm = float(np.linalg.norm(x))
        return x / norm if norm > 0.0 else np.zeros_like(x)

    def objective_fn(x):
        return ls_loss(prob, x) + rho * (float(np.sum(np.abs(x))) - float(np.linalg.norm(x)))

    split = ConvexSplit(prox=lambda v, t: shrink(v, t), linear=linear)
    x, history, steps, k, converged = _dca_admm_loop(
        prob, rho, split, objective_fn, cfg, inner, callback, "l12_dca"
    )
    return SolveTrace(
        solution=x,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        iterations=k,
        converged=converged,
        solver="l12_dca",
    )


def aiht_solve(
    prob: LeastSquaresProblem,
    s: int,
    cfg: SolverConfig,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """
    Iterative hard thresholding x+ = H_s(x - beta grad phi(x)); a Nesterov
    extrapolated candidate replaces it whenever it has lower loss.
    """
    if int(s) != s or not 1 <= s <= prob.N:
        raise ParameterError(f"s must satisfy 1 <= s <= N={prob.N}, got {s}")
    step = _resolve_step(prob, cfg)
    max_iter = _resolve_max_iter(prob, cfg)
    x = initial_point(prob, cfg)
    x_old = x.copy()
    t = 1.0
    history = [ls_loss(prob, x)]
    steps = []
    converged = False
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iter + 1):
            y = x - step * ls_gradient(prob, x)
            _check_finite(y, k, cfg, "aiht")
            x_new = truncate(y, s)
            loss_new = ls_loss(prob, x_new)

            t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            z = x + ((t - 1.0) / t_next) * (x - x_old)
            z_step = z - step * ls_gradient(prob, z)
            if np.all(np.isfinite(z_step)):
                x_acc = truncate(z_step, s)
                loss_acc = ls_loss(prob, x_acc)
                if loss_acc < loss_new:
                    x_new, loss_new = x_acc, loss_acc
            t = t_next

            d, rel = _relative_step(x_new, x)
            steps.append(d)
            x_old, x = x, x_new
            history.append(loss_new)
            if callback is not None:
                callback(k, x)
            if rel < cfg.tol:
                converged = True
                break
    logger.info("aiht finished: iterations=%d converged=%s loss=%.6e", k, converged, history[-1])
    return SolveTrace(
        solution=x,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        iterations=k,
        converged=converged,
        s_history=(int(s),),
        solver="aiht",
    )


HALF_THRESHOLD_CONST = 54.0 ** (1.0 / 3.0) / 4.0


def half_threshold(z: np.ndarray, lam: float) -> np.ndarray:
    """
    Half-thresholding operator: argmin_t (t - z)^2 + lam |t|^{1/2}, elementwise.
    """
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(z)
    keep = np.abs(z) > HALF_THRESHOLD_CONST * lam ** (2.0 / 3.0)
    if np.any(keep):
        zk = z[keep]
        phi = np.arccos((lam / 8.0) * (np.abs(zk) / 3.0) ** (-1.5))
        out[keep] = (2.0 / 3.0) * zk * (1.0 + np.cos(2.0 * np.pi / 3.0 - (2.0 / 3.0) * phi))
    return out


def half_threshold_solve(
    prob: LeastSquaresProblem,
    rho: float,
    cfg: SolverConfig,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """Iterative half thresholding for 1/2||Ax-b||^2 + rho sum |x_i|^{1/2}."""
    if not rho > 0.0:
        raise ParameterError(f"rho must be positive, got {rho}")
    step = _resolve_step(prob, cfg)
    max_iter = _resolve_max_iter(prob, cfg)
    x = initial_point(prob, cfg)

    def objective_fn(z):
        return ls_loss(prob, z) + rho * float(np.sum(np.sqrt(np.abs(z))))

    history = [objective_fn(x)]
    steps = []
    converged = False
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iter + 1):
            y = x - step * ls_gradient(prob, x)
            _check_finite(y, k, cfg, "half_threshold")
            x_new = half_threshold(y, 2.0 * step * rho)
            d, rel = _relative_step(x_new, x)
            steps.append(d)
            x = x_new
            history.append(objective_fn(x))
            if callback is not None:
                callback(k, x)
            if rel < cfg.tol:
                converged = True
                break
    logger.info("half_threshold finished: iterations=%d converged=%s", k, converged)
    return SolveTrace(
        solution=x,
        objective_history=tuple(history),
        step_norm_history=tuple(steps),
        iterations=k,
        converged=converged,
        solver="half_threshold",
    )


SOLVER_METHODS = (
    "fbs",
    "pdca",
    "dca_admm",
    "dca_admm_generalized",
    "l1_admm",
    "l12_dca",
    "aiht",
    "half_threshold",
)
PENALTY_METHODS = ("fbs", "pdca", "dca_admm", "dca_admm_generalized")


def solve_with(
    method: str,
    prob: LeastSquaresProblem,
    cfg: SolverConfig,
    penalty: Optional[SDiffPenalty] = None,
    s: Optional[int] = None,
    inner: Optional[AdmmConfig] = None,
    callback: Optional[Callback] = None,
) -> SolveTrace:
    """
    Dispatch to a solver by name.

    :param method: one of SOLVER_METHODS
    :param prob: least-squares data
    :param cfg: solver configuration (rho is the method's penalty weight)
    :param penalty: required by the s-difference methods
    :param s: sparsity level for aiht (defaults to penalty.s)
    :param inner: ADMM settings for the DCA methods
    :param callback: per-iteration hook callback(k, x)
    :return: SolveTrace
    """
    if method not in SOLVER_METHODS:
        raise ParameterError(f"unknown solver {method!r}; choose from {', '.join(SOLVER_METHODS)}")
    if method in PENALTY_METHODS and penalty is None:
        raise ParameterError(f"solver {method} needs a penalty")
    inner = inner or AdmmConfig()
    if method == "fbs":
        return fbs_solve(prob, penalty, cfg, callback)
    if method == "pdca":
        return pdca_solve(prob, penalty, cfg, callback=callback)
    if method in ("dca_admm", "dca_admm_generalized"):
        return dca_admm_solve(
            prob, penalty, cfg, inner, generalized=method == "dca_admm_generalized", callback=callback
        )
    if method == "l12_dca":
        return l12_dca_solve(prob, cfg.rho, cfg, inner, callback)
    if method == "half_threshold":
        return half_threshold_solve(prob, cfg.rho, cfg, callback)
    if method == "aiht":
        if s is None:
            if penalty is None:
                raise ParameterError("aiht needs a sparsity level s")
            s = penalty.s
        return aiht_solve(prob, s, cfg, callback)
    # l1_admm runs a fixed number of sweeps from zero
    iters = _resolve_max_iter(prob, cfg)
    solution = l1_admm_solve(prob, cfg.rho, iters, inner.mu)
    if callback is not None:
        callback(iters, solution)
    return SolveTrace(
        solution=solution,
        objective_history=(),
        step_norm_history=(),
        iterations=iters,
        converged=True,
        solver="l1_admm",
    )


# ---------------------------------------------------------------------------
# Exact-penalty thresholds for rho
# ---------------------------------------------------------------------------


class BoundKind(str, Enum):
    LIPSCHITZ_LOSS = "lipschitz"
    L1 = "l1"
    L1L2 = "l1l2"
    LSP = "lsp"
    GRADIENT_LIPSCHITZ = "gradient"
    LEAST_SQUARES_L1 = "ls-l1"
    LEAST_SQUARES_L1L2 = "ls-l1l2"
    LEAST_SQUARES_LSP = "ls-lsp"


BOUND_FORMULAS = {
    BoundKind.LIPSCHITZ_LOSS: "beta / eta",
    BoundKind.L1: "beta",
    BoundKind.L1L2: "beta / (1 - a / (2 sqrt(s)))",
    BoundKind.LSP: "beta / (theta1 - theta2)",
    BoundKind.GRADIENT_LIPSCHITZ: "(||grad phi(0)|| + (1 + 1/(2 sqrt(s+1))) L C) / eta",
    BoundKind.LEAST_SQUARES_L1: "||A^T b|| + (1 + 1/(2 sqrt(s+1))) ||A||^2 C",
    BoundKind.LEAST_SQUARES_L1L2: "(||A^T b|| + (1 + 1/(2 sqrt(s+1))) ||A||^2 C) / (1 - a / (2 sqrt(s)))",
    BoundKind.LEAST_SQUARES_LSP: "(||A^T b|| + (1 + 1/(2 sqrt(s+1))) ||A||^2 C) / (theta1 - theta2)",
}

_BOUND_INPUTS = {
    BoundKind.LIPSCHITZ_LOSS: ("beta", "eta"),
    BoundKind.L1: ("beta",),
    BoundKind.L1L2: ("beta", "a", "s"),
    BoundKind.LSP: ("beta", "theta1", "theta2"),
    BoundKind.GRADIENT_LIPSCHITZ: ("grad0", "L", "C", "eta", "s"),
    BoundKind.LEAST_SQUARES_L1: ("atb", "a2", "C", "s"),
    BoundKind.LEAST_SQUARES_L1L2: ("atb", "a2", "C", "s", "a"),
    BoundKind.LEAST_SQUARES_LSP: ("atb", "a2", "C", "s", "theta1", "theta2"),
}


def bound_inputs(kind: BoundKind) -> Sequence[str]:
    return _BOUND_INPUTS[BoundKind(kind)]


def rho_lower_bound(kind: BoundKind, **inputs: float) -> float:
    """
    Threshold rho_bar such that every rho > rho_bar makes the penalized
    optimum feasible for the s-sparse constrained problem.

    :param kind: which bound to evaluate (see ``BOUND_FORMULAS``)
    :param inputs: the scalars named by ``bound_inputs(kind)``
    :return: rho_bar
    """
    kind = BoundKind(kind)
    required = _BOUND_INPUTS[kind]
    missing = [name for name in required if inputs.get(name) is None]
    if missing:
        raise ParameterError(f"{kind.value} bound needs {', '.join(missing)}")
    values = {name: float(inputs[name]) for name in required}
    for name, value in values.items():
        if name == "grad0":
            if value < 0.0:
                raise ParameterError("grad0 must be nonnegative")
        elif name == "atb":
            if value < 0.0:
                raise ParameterError("atb must be nonnegative")
        elif not value > 0.0:
            raise ParameterError(f"{name} must be positive, got {value}")
    if "s" in values and values["s"] != int(values["s"]):
        raise ParameterError(f"s must be an integer, got {values['s']}")
    if "a" in values and not values["a"] <= 1.0:
        raise ParameterError(f"a must satisfy 0 < a <= 1, got {values['a']}")
    if "theta1" in values and not values["theta1"] > values["theta2"]:
        raise ParameterError("theta1 must exceed theta2")

    def l1l2_factor():
        return 1.0 - values["a"] / (2.0 * math.sqrt(values["s"]))

    def ls_core():
        return values["atb"] + (1.0 + 1.0 / (2.0 * math.sqrt(values["s"] + 1.0))) * values["a2"] * values["C"]

    if kind is BoundKind.LIPSCHITZ_LOSS:
        return values["beta"] / values["eta"]
    if kind is BoundKind.L1:
        return values["beta"]
    if kind is BoundKind.L1L2:
        return values["beta"] / l1l2_factor()
    if kind is BoundKind.LSP:
        return values["beta"] / (values["theta1"] - values["theta2"])
    if kind is BoundKind.GRADIENT_LIPSCHITZ:
        slope = 1.0 + 1.0 / (2.0 * math.sqrt(values["s"] + 1.0))
        return (values["grad0"] + slope * values["L"] * values["C"]) / values["eta"]
    if kind is BoundKind.LEAST_SQUARES_L1:
        return ls_core()
    if kind is BoundKind.LEAST_SQUARES_L1L2:
        return ls_core() / l1l2_factor()
    return ls_core() / (values["theta1"] - values["theta2"])


if __name__ == "__main__":
    # Example usage
    from utils.sensing_operators import gen_gaussian, gen_sparse_signal
    from utils.sparse_penalty import Regularizer

    logging.basicConfig(level=logging.INFO)
    A = gen_gaussian(64, 256, seed=1)
    x_true = gen_sparse_signal(256, 8, seed=2)
    problem = LeastSquaresProblem(A, A.data @ x_true)
    trace = fbs_solve(problem, SDiffPenalty(Regularizer.l1(), 8), SolverConfig(rho=0.1, init="l1_admm"))
    print(f"Rel.Err: {np.linalg.norm(trace.solution - x_true) / np.linalg.norm(x_true):.3e}")
    print(f"Trace: {trace.summary()}")
