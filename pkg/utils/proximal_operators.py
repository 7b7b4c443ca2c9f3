"""
Proximal operators of lambda * P for the s-difference penalty.

Each closed form solves
    argmin_x  ||x - y||^2 / (2 lambda) + P(x)
exactly; ``prox_oracle`` minimizes the same objective numerically and is
used to validate them.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils.sparse_penalty import (
    CapabilityError,
    ParameterError,
    RegularizerKind,
    SDiffPenalty,
    as_vector,
    penalty_eval,
    penalty_subgradient,
    top_mask,
    truncate,
)

CLOSED_FORM_KINDS = frozenset(
    {
        RegularizerKind.L1,
        RegularizerKind.L2_SQUARED,
        RegularizerKind.L2,
        RegularizerKind.L1_MINUS_AL2,
        RegularizerKind.LSP,
        RegularizerKind.MCP,
    }
)

LSP_TIE_TOL = 1e-12
MIN_ORACLE_BUDGET = 1000


@dataclass(frozen=True)
class ProxProblem:
    penalty: SDiffPenalty
    lam: float
    y: np.ndarray

    def __post_init__(self):
        if not self.lam > 0.0 or not np.isfinite(self.lam):
            raise ParameterError(f"lambda must be positive and finite, got {self.lam}")
        y = as_vector(self.y, "y")
        self.penalty.check_dimension(y.size)
        object.__setattr__(self, "y", y)


def shrink(v, lam: float):
    """Soft shrinkage sign(v) * max(|v| - lam, 0); works on scalars and arrays."""
    if lam < 0:
        raise ParameterError(f"shrinkage threshold must be nonnegative, got {lam}")
    out = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def prox_objective(p: ProxProblem, x) -> float:
    """E(x) = ||x - y||^2 / (2 lambda) + P(x)."""
    x = as_vector(x)
    return float(np.sum((x - p.y) ** 2)) / (2.0 * p.lam) + penalty_eval(p.penalty, x)


def has_closed_form(penalty: SDiffPenalty) -> bool:
    return penalty.reg.kind in CLOSED_FORM_KINDS


def prox_l1(s: int, lam: float, y) -> np.ndarray:
    y = as_vector(y, "y")
    mask = top_mask(y, s)
    return np.where(mask, y, shrink(y, lam))


def prox_l2sq(s: int, lam: float, y) -> np.ndarray:
    y = as_vector(y, "y")
    mask = top_mask(y, s)
    return np.where(mask, y, y / (2.0 * lam + 1.0))


def prox_l2(s: int, lam: float, y) -> np.ndarray:
    """
    Closed form for R = ||.||_2.

    With T = sqrt(||y - y^s||^2 + (||y^s|| + lam)^2) the top entries scale by
    (||y^s|| + lam)(T - lam) / (||y^s|| T) and the rest by (T - lam) / T.
    """
    y = as_vector(y, "y")
    mask = top_mask(y, s)
    rest_norm = float(np.linalg.norm(np.where(mask, 0.0, y)))
    if rest_norm == 0.0:
        # already s-sparse (including y = 0): the top factor collapses to 1
        return y.copy()
    top_norm = float(np.linalg.norm(np.where(mask, y, 0.0)))
    t = np.hypot(rest_norm, top_norm + lam)
    top_scale = (top_norm + lam) * (t - lam) / (top_norm * t)
    rest_scale = (t - lam) / t
    return np.where(mask, top_scale * y, rest_scale * y)


def prox_l1_minus_al2(a: float, s: int, lam: float, y) -> np.ndarray:
    """
    Closed form for R = ||.||_1 - a ||.||_2, 0 <= a <= 1.

    When the (s+1)-th magnitude exceeds lam the solution rescales the top
    entries and the shrunk remainder; otherwise y^s is returned. In the
    degenerate case a = 1, s = 1, |y_(1)| = lam (infinitely many minimizers)
    y^s is the canonical choice sign(y_(1)) * lam * e_(1).
    """
    if not 0.0 <= a <= 1.0:
        raise ParameterError(f"a must lie in [0, 1], got {a}")
    y = as_vector(y, "y")
    if a == 0.0:
        return prox_l1(s, lam, y)
    n = y.size
    if s >= n:
        return y.copy()
    order = np.argsort(-np.abs(y), kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:s]] = True
    if not abs(y[order[s]]) > lam:
        return np.where(mask, y, 0.0)

    top_norm = float(np.linalg.norm(y[mask]))
    z_rest = np.where(mask, 0.0, shrink(y, lam))
    d = np.hypot(float(np.linalg.norm(z_rest)), top_norm - a * lam)
    grow = 1.0 + a * lam / d
    top_scale = (top_norm - a * lam) / top_norm * grow
    return np.where(mask, top_scale * y, grow * z_rest)


def prox_mcp(theta: float, s: int, lam: float, y) -> np.ndarray:
    """
    Closed form for the MCP penalty.

    For theta > lam entries off the top set are firm-thresholded. For
    theta <= lam the scalar problem is minimized at 0 or at y_i, whichever is
    lower, which is a hard threshold at sqrt(lam * theta).
    """
    if not theta > 0.0:
        raise ParameterError(f"theta must be positive, got {theta}")
    y = as_vector(y, "y")
    mask = top_mask(y, s)
    ay = np.abs(y)
    if theta > lam:
        firm = np.sign(y) * np.maximum(theta * (ay - lam) / (theta - lam), 0.0)
        off = np.where(ay >= theta, y, firm)
    else:
        off = np.where(ay > np.sqrt(lam * theta), y, 0.0)
    return np.where(mask, y, off)


def _lsp_scalar(u: float, theta: float, lam: float) -> float:
    """argmin_{t >= 0} (t - u)^2 / (2 lam) + log(1 + t / theta) for u >= 0."""

    def objective(t: float) -> float:
        return (t - u) ** 2 / (2.0 * lam) + np.log1p(t / theta)

    candidates = [0.0]
    disc = (u - theta) ** 2 - 4.0 * (lam - u * theta)
    if disc >= 0.0:
        root = np.sqrt(disc)
        candidates.append(max((u - theta + root) / 2.0, 0.0))
        candidates.append(max((u - theta - root) / 2.0, 0.0))
    best = 0.0
    best_value = objective(0.0)
    # ascending magnitude so ties keep the sparser candidate
    for t in sorted(candidates):
        value = objective(t)
        if value < best_value - LSP_TIE_TOL:
            best, best_value = t, value
    return best


def prox_lsp(theta: float, s: int, lam: float, y) -> np.ndarray:
    if not theta > 0.0:
        raise ParameterError(f"theta must be positive, got {theta}")
    y = as_vector(y, "y")
    mask = top_mask(y, s)
    out = y.copy()
    for i in np.flatnonzero(~mask):
        out[i] = np.sign(y[i]) * _lsp_scalar(abs(float(y[i])), theta, lam)
    return out


def prox_sdiff(p: ProxProblem) -> np.ndarray:
    """Dispatch to the closed form matching the penalty's regularizer."""
    reg = p.penalty.reg
    s = p.penalty.s
    kind = reg.kind
    if kind is RegularizerKind.L1:
        return prox_l1(s, p.lam, p.y)
    if kind is RegularizerKind.L2_SQUARED:
        return prox_l2sq(s, p.lam, p.y)
    if kind is RegularizerKind.L2:
        return prox_l2(s, p.lam, p.y)
    if kind is RegularizerKind.L1_MINUS_AL2:
        return prox_l1_minus_al2(reg.a, s, p.lam, p.y)
    if kind is RegularizerKind.MCP:
        return prox_mcp(reg.theta, s, p.lam, p.y)
    if kind is RegularizerKind.LSP:
        return prox_lsp(reg.theta, s, p.lam, p.y)
    raise CapabilityError(
        f"no closed-form proximal operator for {kind.value}; use prox_oracle"
    )


def _descend(
    p: ProxProblem,
    x: np.ndarray,
    steps: int,
    step0: float,
    rng: np.random.Generator,
) -> tuple:
    """Accept-if-better descent from x: subgradient trial first, random trials after."""
    value = prox_objective(p, x)
    step = step0
    misses = 0
    for k in range(steps):
        if misses == 0:
            direction = (x - p.y) / p.lam + penalty_subgradient(p.penalty, x)
        else:
            direction = rng.standard_normal(x.size)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            direction = rng.standard_normal(x.size)
            norm = np.linalg.norm(direction)
        candidate = x - step * direction / norm
        # snap near-zero coordinates so exact zeros are reachable
        candidate[np.abs(candidate) < step * 1e-3] = 0.0
        cand_value = prox_objective(p, candidate)
        if cand_value < value:
            x, value = candidate, cand_value
            misses = 0
        else:
            misses += 1
            if misses % 50 == 0:
                step *= 0.5
                if step < 1e-14:
                    break
    return x, value


def prox_oracle(
    p: ProxProblem,
    budget: int = 4000,
    restarts: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """
    Numerically minimize E by multi-start local descent.

    Starts are 0, y, y^{s'} for every s' and ``restarts`` sign-consistent
    random shrinkings of y. ``budget`` is the total number of descent trials
    shared across all starts.

    :param p: prox problem
    :param budget: total descent trials (>= 1000)
    :param restarts: number of random starts
    :param seed: seed for the random starts and directions
    :return: best point found
    """
    if budget < MIN_ORACLE_BUDGET:
        raise ParameterError(f"oracle budget must be at least {MIN_ORACLE_BUDGET}, got {budget}")
    y = p.y
    n = y.size
    rng = np.random.default_rng(seed)
    starts = [np.zeros(n), y.copy()]
    starts += [truncate(y, k) for k in range(1, n + 1)]
    starts += [y * rng.uniform(0.0, 1.0, size=n) for _ in range(restarts)]

    # exact candidates first: they are often optimal already
    best = None
    best_value = np.inf
    for x in starts:
        value = prox_objective(p, x)
        if value < best_value:
            best, best_value = x, value

    step0 = 0.1 * max(1.0, float(np.max(np.abs(y))))
    per_start = max(budget // len(starts), 1)
    for x in starts:
        x, value = _descend(p, x.copy(), per_start, step0, rng)
        if value < best_value:
            best, best_value = x, value
    return best


def prox_gap(p: ProxProblem, x_closed, x_oracle) -> float:
    """Relative objective gap of a closed-form answer over the oracle's."""
    e_closed = prox_objective(p, x_closed)
    e_oracle = prox_objective(p, x_oracle)
    return (e_closed - e_oracle) / max(1.0, abs(e_oracle))


if __name__ == "__main__":
    # Example usage
    from utils.sparse_penalty import Regularizer

    problem = ProxProblem(SDiffPenalty(Regularizer.l2(), s=1), lam=1.0, y=np.array([2.0, 1.0]))
    closed = prox_sdiff(problem)
    oracle = prox_oracle(problem)
    print(f"closed form: {closed}, E = {prox_objective(problem, closed):.8f}")
    print(f"oracle:      {oracle}, E = {prox_objective(problem, oracle):.8f}")
