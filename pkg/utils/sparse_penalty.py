"""
Top-s truncation, base regularizers R and the s-difference penalty
P(x) = R(x) - R(x^s) together with its difference-of-convex split P = P1 - P2.

Vectors are plain 1-D float64 numpy arrays; ``as_vector`` validates them.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class ParameterError(ValueError):
    """Out-of-range argument or invalid configuration."""


class CapabilityError(NotImplementedError):
    """Operation not available for the requested regularizer."""


class DivergenceError(ArithmeticError):
    """An iterative solver produced a non-finite iterate."""

    def __init__(self, iteration: int, config=None, solver: str = ""):
        self.iteration = iteration
        self.config = config
        self.solver = solver
        super().__init__(
            f"{solver or 'solver'} diverged at iteration {iteration} "
            f"(non-finite iterate); config={config!r}"
        )


class ConfigError(ValueError):
    """Malformed JSON configuration."""

    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


def as_vector(x, name: str = "x") -> np.ndarray:
    """
    Convert input to a finite 1-D float64 array.

    :param x: array-like of reals
    :param name: label used in error messages
    :return: validated copy-free view when possible
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 1:
        raise ParameterError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains NaN or Inf")
    return arr


class RegularizerKind(str, Enum):
    L1 = "l1"
    L2_SQUARED = "l2sq"
    L2 = "l2"
    L1_MINUS_AL2 = "l1-al2"
    LSP = "lsp"
    MCP = "mcp"
    SCAD = "scad"
    HUBER_OF_L2 = "huber-l2"
    LOG_OF_L2 = "log-l2"
    MCP_OF_L2 = "mcp-l2"
    LSP_WEIGHTED = "lsp-weighted"
    # evaluation only
    L_HALF = "l-half"
    L1_OVER_L2 = "l1/l2"


# Kinds whose value is a sum of scalar terms r(x_i).
SEPARABLE_KINDS = frozenset(
    {
        RegularizerKind.L1,
        RegularizerKind.L2_SQUARED,
        RegularizerKind.LSP,
        RegularizerKind.MCP,
        RegularizerKind.SCAD,
        RegularizerKind.LSP_WEIGHTED,
        RegularizerKind.L_HALF,
    }
)

# Kinds without a difference-of-convex split.
EVAL_ONLY_KINDS = frozenset({RegularizerKind.L_HALF, RegularizerKind.L1_OVER_L2})


@dataclass(frozen=True)
class Regularizer:
    """
    Base penalty R with its parameters.

    ``a`` is used by L1MinusAL2, ``theta`` by the single-parameter
    nonconvex kinds, ``theta1``/``theta2`` by LSPWeighted.
    """

    kind: RegularizerKind
    a: float = 1.0
    theta: float = 1.0
    theta1: float = 2.0
    theta2: float = 1.0

    def __post_init__(self):
        kind = RegularizerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is RegularizerKind.L1_MINUS_AL2 and not 0.0 <= self.a <= 1.0:
            raise ParameterError(f"a must lie in [0, 1], got {self.a}")
        if kind in (
            RegularizerKind.LSP,
            RegularizerKind.MCP,
            RegularizerKind.HUBER_OF_L2,
            RegularizerKind.LOG_OF_L2,
            RegularizerKind.MCP_OF_L2,
        ) and not self.theta > 0.0:
            raise ParameterError(f"theta must be positive for {kind.value}, got {self.theta}")
        if kind is RegularizerKind.SCAD and not self.theta > 2.0:
            raise ParameterError(f"SCAD requires theta > 2, got {self.theta}")
        if kind is RegularizerKind.LSP_WEIGHTED:
            if not self.theta1 > self.theta2 > 0.0:
                raise ParameterError(
                    f"LSPWeighted requires theta1 > theta2 > 0, got {self.theta1}, {self.theta2}"
                )
            if self.theta1 * self.theta2 < 1.0:
                # r dips below zero on (0, t*) so P may be negative off the s-sparse set
                logger.warning(
                    "LSPWeighted with theta1 * theta2 = %g < 1 is not monotone near 0",
                    self.theta1 * self.theta2,
                )

    # Convenience constructors
    @classmethod
    def l1(cls) -> "Regularizer":
        return cls(RegularizerKind.L1)

    @classmethod
    def l2_squared(cls) -> "Regularizer":
        return cls(RegularizerKind.L2_SQUARED)

    @classmethod
    def l2(cls) -> "Regularizer":
        return cls(RegularizerKind.L2)

    @classmethod
    def l1_minus_al2(cls, a: float = 1.0) -> "Regularizer":
        return cls(RegularizerKind.L1_MINUS_AL2, a=a)

    @classmethod
    def lsp(cls, theta: float) -> "Regularizer":
        return cls(RegularizerKind.LSP, theta=theta)

    @classmethod
    def mcp(cls, theta: float) -> "Regularizer":
        return cls(RegularizerKind.MCP, theta=theta)

    @classmethod
    def scad(cls, theta: float) -> "Regularizer":
        return cls(RegularizerKind.SCAD, theta=theta)

    @classmethod
    def huber_of_l2(cls, theta: float) -> "Regularizer":
        return cls(RegularizerKind.HUBER_OF_L2, theta=theta)

    @classmethod
    def log_of_l2(cls, theta: float) -> "Regularizer":
        return cls(RegularizerKind.LOG_OF_L2, theta=theta)

    @classmethod
    def mcp_of_l2(cls, theta: float) -> "Regularizer":
        return cls(RegularizerKind.MCP_OF_L2, theta=theta)

    @classmethod
    def lsp_weighted(cls, theta1: float, theta2: float) -> "Regularizer":
        return cls(RegularizerKind.LSP_WEIGHTED, theta1=theta1, theta2=theta2)

    @classmethod
    def l_half(cls) -> "Regularizer":
        return cls(RegularizerKind.L_HALF)

    @classmethod
    def l1_over_l2(cls) -> "Regularizer":
        return cls(RegularizerKind.L1_OVER_L2)

    @property
    def is_separable(self) -> bool:
        return self.kind in SEPARABLE_KINDS

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.kind is RegularizerKind.L1_MINUS_AL2:
            out["a"] = self.a
        elif self.kind is RegularizerKind.LSP_WEIGHTED:
            out["theta1"] = self.theta1
            out["theta2"] = self.theta2
        elif self.kind not in (
            RegularizerKind.L1,
            RegularizerKind.L2,
            RegularizerKind.L2_SQUARED,
            RegularizerKind.L_HALF,
            RegularizerKind.L1_OVER_L2,
        ):
            out["theta"] = self.theta
        return out


@dataclass(frozen=True)
class SDiffPenalty:
    """P(x) = R(x) - R(x^s)."""

    reg: Regularizer
    s: int

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise ParameterError(f"sparsity level s must be a positive integer, got {self.s}")
        object.__setattr__(self, "s", int(self.s))

    def check_dimension(self, n: int) -> None:
        if self.s > n:
            raise ParameterError(f"sparsity level s={self.s} exceeds dimension N={n}")

    def with_s(self, s: int) -> "SDiffPenalty":
        return SDiffPenalty(self.reg, s)


@dataclass(frozen=True)
class TopSSplit:
    top_indices: np.ndarray
    rest_indices: np.ndarray
    permutation: np.ndarray


def _check_s(n: int, s: int) -> None:
    if int(s) != s or not 1 <= s <= n:
        raise ParameterError(f"s must satisfy 1 <= s <= N={n}, got {s}")


def top_s_split(y, s: int) -> TopSSplit:
    """
    Partition indices into the s largest magnitudes and the rest.

    Ties are broken by ascending index (stable sort on -|y|).
    """
    y = as_vector(y, "y")
    _check_s(y.size, s)
    permutation = np.argsort(-np.abs(y), kind="stable")
    return TopSSplit(
        top_indices=permutation[:s].copy(),
        rest_indices=permutation[s:].copy(),
        permutation=permutation,
    )


def top_mask(y: np.ndarray, s: int) -> np.ndarray:
    """Boolean mask of the top-s set under the same tie-break as ``top_s_split``."""
    _check_s(y.size, s)
    mask = np.zeros(y.size, dtype=bool)
    mask[np.argsort(-np.abs(y), kind="stable")[:s]] = True
    return mask


def truncate(y, s: int) -> np.ndarray:
    """Best s-term approximation y^s."""
    y = as_vector(y, "y")
    _check_s(y.size, s)
    out = np.zeros_like(y)
    mask = top_mask(y, s)
    out[mask] = y[mask]
    return out


# ---------------------------------------------------------------------------
# Scalar pieces. Nonconvex kinds are written r(t) = c*t - h(t) on t >= 0 with
# h convex and nondecreasing; c is the weight of the l1 part.
# ---------------------------------------------------------------------------


def _mcp_value(t: np.ndarray, theta: float) -> np.ndarray:
    return np.where(t <= theta, t - t * t / (2.0 * theta), theta / 2.0)


def _scad_value(t: np.ndarray, theta: float) -> np.ndarray:
    middle = (2.0 * theta * t - t * t - 1.0) / (2.0 * (theta - 1.0))
    return np.where(t < 1.0, t, np.where(t < theta, middle, (theta + 1.0) / 2.0))


def scalar_value(reg: Regularizer, t: np.ndarray) -> np.ndarray:
    """Per-coordinate terms r(|t|) of a separable regularizer."""
    t = np.abs(t)
    kind = reg.kind
    if kind is RegularizerKind.L1:
        return t
    if kind is RegularizerKind.L2_SQUARED:
        return t * t
    if kind is RegularizerKind.LSP:
        return np.log1p(t / reg.theta)
    if kind is RegularizerKind.MCP:
        return _mcp_value(t, reg.theta)
    if kind is RegularizerKind.SCAD:
        return _scad_value(t, reg.theta)
    if kind is RegularizerKind.LSP_WEIGHTED:
        return reg.theta1 * t - np.log1p(t / reg.theta2)
    if kind is RegularizerKind.L_HALF:
        return np.sqrt(t)
    raise CapabilityError(f"{kind.value} is not separable")


def l1_weight(reg: Regularizer) -> float:
    """Coefficient c of the l1 part of R, for kinds that have one."""
    kind = reg.kind
    if kind in (
        RegularizerKind.L1,
        RegularizerKind.L1_MINUS_AL2,
        RegularizerKind.MCP,
        RegularizerKind.SCAD,
    ):
        return 1.0
    if kind is RegularizerKind.LSP:
        return 1.0 / reg.theta
    if kind is RegularizerKind.LSP_WEIGHTED:
        return reg.theta1
    raise CapabilityError(f"{kind.value} has no l1 part")


def _concave_h(reg: Regularizer, t: np.ndarray) -> np.ndarray:
    """h(t) = c*t - r(t) for the nonconvex kinds (separable or of the l2 norm)."""
    kind = reg.kind
    theta = reg.theta
    if kind in (RegularizerKind.LSP, RegularizerKind.LOG_OF_L2):
        return t / theta - np.log1p(t / theta)
    if kind in (RegularizerKind.MCP, RegularizerKind.MCP_OF_L2):
        return np.where(t <= theta, t * t / (2.0 * theta), t - theta / 2.0)
    if kind is RegularizerKind.SCAD:
        return np.where(
            t < 1.0,
            0.0,
            np.where(
                t < theta,
                (t - 1.0) ** 2 / (2.0 * (theta - 1.0)),
                t - (theta + 1.0) / 2.0,
            ),
        )
    raise CapabilityError(f"{kind.value} has no concave part")


def _concave_h_prime(reg: Regularizer, t: np.ndarray) -> np.ndarray:
    kind = reg.kind
    theta = reg.theta
    if kind in (RegularizerKind.LSP, RegularizerKind.LOG_OF_L2):
        return t / (theta * (theta + t))
    if kind in (RegularizerKind.MCP, RegularizerKind.MCP_OF_L2):
        return np.where(t <= theta, t / theta, 1.0)
    if kind is RegularizerKind.SCAD:
        return np.where(t < 1.0, 0.0, np.where(t < theta, (t - 1.0) / (theta - 1.0), 1.0))
    raise CapabilityError(f"{kind.value} has no concave part")


def _norm_weight(reg: Regularizer) -> float:
    """c for the kinds built on the l2 norm: r(t) = c*t - h(t)."""
    if reg.kind is RegularizerKind.LOG_OF_L2:
        return 1.0 / reg.theta
    return 1.0


def _huber(t: float, theta: float) -> float:
    return t * t / (2.0 * theta) if t <= theta else t - theta / 2.0


def _huber_prime(t: float, theta: float) -> float:
    return t / theta if t <= theta else 1.0


def _unit(x: np.ndarray) -> np.ndarray:
    """x / ||x||_2, with 0 at the origin."""
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return np.zeros_like(x)
    return x / norm


def reg_eval(reg: Regularizer, x) -> float:
    """Value R(x)."""
    x = as_vector(x)
    kind = reg.kind
    if kind in SEPARABLE_KINDS:
        return float(np.sum(scalar_value(reg, x)))
    norm2 = float(np.linalg.norm(x))
    if kind is RegularizerKind.L2:
        return norm2
    if kind is RegularizerKind.L1_MINUS_AL2:
        return float(np.sum(np.abs(x))) - reg.a * norm2
    if kind is RegularizerKind.HUBER_OF_L2:
        return _huber(norm2, reg.theta)
    if kind is RegularizerKind.LOG_OF_L2:
        return float(np.log1p(norm2 / reg.theta))
    if kind is RegularizerKind.MCP_OF_L2:
        return float(_mcp_value(np.asarray(norm2), reg.theta))
    if kind is RegularizerKind.L1_OVER_L2:
        return 0.0 if norm2 == 0.0 else float(np.sum(np.abs(x))) / norm2
    raise CapabilityError(f"unknown regularizer {kind!r}")


def penalty_eval(penalty: SDiffPenalty, x) -> float:
    """Value P(x) = R(x) - R(x^s), clipped at zero against rounding."""
    x = as_vector(x)
    penalty.check_dimension(x.size)
    value = reg_eval(penalty.reg, x) - reg_eval(penalty.reg, truncate(x, penalty.s))
    return max(value, 0.0)


def _require_dc(reg: Regularizer) -> None:
    if reg.kind in EVAL_ONLY_KINDS:
        raise CapabilityError(f"{reg.kind.value} has no difference-of-convex split")


def dc_parts(penalty: SDiffPenalty, x) -> Tuple[float, float]:
    """
    Return (P1(x), P2(x)) with P1 - P2 = P and both parts convex.

    :param penalty: s-difference penalty
    :param x: evaluation point
    :return: tuple of the two convex parts
    """
    x = as_vector(x)
    penalty.check_dimension(x.size)
    reg = penalty.reg
    _require_dc(reg)
    kind = reg.kind
    mask = top_mask(x, penalty.s)
    xs = np.where(mask, x, 0.0)
    ax = np.abs(x)

    if kind in (
        RegularizerKind.L1,
        RegularizerKind.L2_SQUARED,
        RegularizerKind.L2,
        RegularizerKind.HUBER_OF_L2,
        RegularizerKind.LSP_WEIGHTED,
    ):
        return reg_eval(reg, x), reg_eval(reg, xs)

    if kind is RegularizerKind.L1_MINUS_AL2:
        p1 = float(np.sum(ax)) + reg.a * float(np.linalg.norm(xs))
        p2 = float(np.sum(ax[mask])) + reg.a * float(np.linalg.norm(x))
        return p1, p2

    if kind in (RegularizerKind.LSP, RegularizerKind.MCP, RegularizerKind.SCAD):
        c = l1_weight(reg)
        h = _concave_h(reg, ax)
        p1 = c * float(np.sum(ax)) + float(np.sum(h[mask]))
        p2 = c * float(np.sum(ax[mask])) + float(np.sum(h))
        return p1, p2

    # LogOfL2, MCPOfL2
    c = _norm_weight(reg)
    nx = float(np.linalg.norm(x))
    nxs = float(np.linalg.norm(xs))
    p1 = c * nx + float(_concave_h(reg, np.asarray(nxs)))
    p2 = c * nxs + float(_concave_h(reg, np.asarray(nx)))
    return p1, p2


def p1_subgradient(penalty: SDiffPenalty, x) -> np.ndarray:
    """One element of the subdifferential of P1 at x (0 chosen at kinks of |.|)."""
    x = as_vector(x)
    penalty.check_dimension(x.size)
    reg = penalty.reg
    _require_dc(reg)
    kind = reg.kind
    mask = top_mask(x, penalty.s)
    xs = np.where(mask, x, 0.0)
    sgn = np.sign(x)
    ax = np.abs(x)

    if kind is RegularizerKind.L1:
        return sgn
    if kind is RegularizerKind.L2_SQUARED:
        return 2.0 * x
    if kind is RegularizerKind.L2:
        return _unit(x)
    if kind is RegularizerKind.HUBER_OF_L2:
        return _huber_prime(float(np.linalg.norm(x)), reg.theta) * _unit(x)
    if kind is RegularizerKind.LSP_WEIGHTED:
        return (reg.theta1 - 1.0 / (reg.theta2 + ax)) * sgn
    if kind is RegularizerKind.L1_MINUS_AL2:
        return sgn + reg.a * _unit(xs)
    if kind in (RegularizerKind.LSP, RegularizerKind.MCP, RegularizerKind.SCAD):
        c = l1_weight(reg)
        return c * sgn + np.where(mask, _concave_h_prime(reg, ax) * sgn, 0.0)
    c = _norm_weight(reg)
    nxs = np.asarray(float(np.linalg.norm(xs)))
    return c * _unit(x) + float(_concave_h_prime(reg, nxs)) * _unit(xs)


def p2_subgradient(penalty: SDiffPenalty, x) -> np.ndarray:
    """
    One element w of the subdifferential of P2 at x.

    Zero is chosen for |.| at zero entries and the top-s set follows the
    tie-break of ``top_s_split``.
    """
    x = as_vector(x)
    penalty.check_dimension(x.size)
    reg = penalty.reg
    _require_dc(reg)
    kind = reg.kind
    mask = top_mask(x, penalty.s)
    xs = np.where(mask, x, 0.0)
    sgn = np.sign(x)
    sgn_top = np.where(mask, sgn, 0.0)
    ax = np.abs(x)

    if kind is RegularizerKind.L1:
        return sgn_top
    if kind is RegularizerKind.L2_SQUARED:
        return 2.0 * xs
    if kind is RegularizerKind.L2:
        return _unit(xs)
    if kind is RegularizerKind.HUBER_OF_L2:
        return _huber_prime(float(np.linalg.norm(xs)), reg.theta) * _unit(xs)
    if kind is RegularizerKind.LSP_WEIGHTED:
        return np.where(mask, (reg.theta1 - 1.0 / (reg.theta2 + ax)) * sgn, 0.0)
    if kind is RegularizerKind.L1_MINUS_AL2:
        return sgn_top + reg.a * _unit(x)
    if kind in (RegularizerKind.LSP, RegularizerKind.MCP, RegularizerKind.SCAD):
        c = l1_weight(reg)
        return c * sgn_top + _concave_h_prime(reg, ax) * sgn
    c = _norm_weight(reg)
    nx = np.asarray(float(np.linalg.norm(x)))
    return c * _unit(xs) + float(_concave_h_prime(reg, nx)) * _unit(x)


def penalty_subgradient(penalty: SDiffPenalty, x) -> np.ndarray:
    """p1_subgradient - p2_subgradient: a generalized gradient of P."""
    return p1_subgradient(penalty, x) - p2_subgradient(penalty, x)


if __name__ == "__main__":
    # Example usage
    x = np.array([3.0, 4.0, 0.0])
    penalty = SDiffPenalty(Regularizer.l1_minus_al2(a=1.0), s=1)
    print(f"R(x): {reg_eval(penalty.reg, x)}")
    print(f"P(x): {penalty_eval(penalty, x)}")
    print(f"DC parts: {dc_parts(penalty, x)}")
    print(f"w in dP2(x): {p2_subgradient(penalty, x)}")
