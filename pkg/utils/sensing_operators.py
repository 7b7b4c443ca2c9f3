"""
Sensing matrices (column-normalized Gaussian, partial DCT), sparse ground
truth signals, observation noise and spectral-norm estimation.

Randomness: every generator takes an integer seed and builds a numpy
``Generator`` on the PCG64 bit generator; Gaussian draws use numpy's
ziggurat ``standard_normal``. Per-trial seeds come from
``trial_seeds(master_seed, trial_index)``.
"""

import os
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import scipy.fft

from utils.sparse_penalty import ParameterError

DUMP_MAGIC = b"SDMX"
_DUMP_HEADER = struct.Struct("<4sQQBq")

POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 1000


class MatrixKind(str, Enum):
    GAUSSIAN = "gaussian_unit_columns"
    PARTIAL_DCT = "partial_dct"
    IDENTITY = "identity"
    EXTERNAL = "external"


_KIND_CODES = {
    MatrixKind.GAUSSIAN: 0,
    MatrixKind.PARTIAL_DCT: 1,
    MatrixKind.IDENTITY: 2,
    MatrixKind.EXTERNAL: 3,
}


@dataclass(frozen=True)
class SensingMatrix:
    data: np.ndarray
    kind: MatrixKind
    seed: Optional[int] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ParameterError(f"sensing matrix must be 2-D and non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("sensing matrix contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", MatrixKind(self.kind))

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def trial_seeds(master_seed: int, trial_index: int) -> Tuple[int, int, int]:
    """Independent (matrix, signal, noise) seeds for one trial."""
    state = np.random.SeedSequence([int(master_seed), int(trial_index)]).generate_state(3)
    return tuple(int(v) for v in state)


def _check_dims(M: int, N: int) -> None:
    if int(M) != M or int(N) != N or M < 1 or N < 1:
        raise ParameterError(f"matrix dimensions must be positive integers, got M={M}, N={N}")


def gen_gaussian(M: int, N: int, seed: int) -> SensingMatrix:
    """
    I.i.d. standard normal entries, each column scaled to unit l2 norm.

    :param M: number of measurements
    :param N: signal dimension
    :param seed: generator seed
    :return: SensingMatrix with kind gaussian_unit_columns
    """
    _check_dims(M, N)
    rng = make_rng(seed)
    data = rng.standard_normal((M, N))
    norms = np.linalg.norm(data, axis=0)
    # a zero column has probability zero; redraw it if it ever happens
    for j in np.flatnonzero(norms == 0.0):
        while norms[j] == 0.0:
            data[:, j] = rng.standard_normal(M)
            norms[j] = np.linalg.norm(data[:, j])
    return SensingMatrix(data / norms[np.newaxis, :], MatrixKind.GAUSSIAN, seed)


def dct_matrix(N: int) -> np.ndarray:
    """Orthonormal DCT-II matrix of size N (row k is the k-th basis vector)."""
    return scipy.fft.dct(np.eye(N), type=2, norm="ortho", axis=0)


def gen_partial_dct(M: int, N: int, seed: int) -> SensingMatrix:
    """M distinct rows of the orthonormal DCT-II matrix, drawn uniformly."""
    _check_dims(M, N)
    if M > N:
        raise ParameterError(f"partial DCT needs M <= N, got M={M}, N={N}")
    rng = make_rng(seed)
    rows = rng.choice(N, size=M, replace=False)
    return SensingMatrix(dct_matrix(N)[rows, :], MatrixKind.PARTIAL_DCT, seed)


def identity_matrix(N: int) -> SensingMatrix:
    _check_dims(N, N)
    return SensingMatrix(np.eye(N), MatrixKind.IDENTITY)


def gen_matrix(kind, M: int, N: int, seed: int) -> SensingMatrix:
    kind = MatrixKind(kind)
    if kind is MatrixKind.GAUSSIAN:
        return gen_gaussian(M, N, seed)
    if kind is MatrixKind.PARTIAL_DCT:
        return gen_partial_dct(M, N, seed)
    if kind is MatrixKind.IDENTITY:
        if M != N:
            raise ParameterError(f"identity matrix needs M == N, got M={M}, N={N}")
        return identity_matrix(N)
    raise ParameterError(f"cannot generate a matrix of kind {kind.value}")


def gen_sparse_signal(N: int, s_truth: int, seed: int) -> np.ndarray:
    """Exactly s_truth standard normal nonzeros at uniformly random distinct positions."""
    if int(s_truth) != s_truth or not 1 <= s_truth <= N:
        raise ParameterError(f"s_truth must satisfy 1 <= s_truth <= N={N}, got {s_truth}")
    rng = make_rng(seed)
    support = rng.choice(N, size=s_truth, replace=False)
    values = rng.standard_normal(s_truth)
    while np.any(values == 0.0):
        zeros = values == 0.0
        values[zeros] = rng.standard_normal(int(zeros.sum()))
    x = np.zeros(N)
    x[support] = values
    return x


def gen_noise(M: int, scale: float, seed: int) -> np.ndarray:
    """scale * randn(M); exactly zero when scale is 0."""
    if scale < 0:
        raise ParameterError(f"noise scale must be nonnegative, got {scale}")
    if scale == 0.0:
        return np.zeros(M)
    return scale * make_rng(seed).standard_normal(M)


def spectral_norm_sq(A) -> float:
    """
    Largest eigenvalue of A^T A by power iteration.

    Stops when the Rayleigh quotient changes by less than 1e-10 relatively,
    or after 1000 iterations.
    """
    data = A.data if isinstance(A, SensingMatrix) else np.asarray(A, dtype=np.float64)
    n = data.shape[1]
    v = make_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_ITER_MAX):
        w = data.T @ (data @ v)
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            return 0.0
        new_estimate = float(v @ w)
        v = w / w_norm
        if abs(new_estimate - estimate) < POWER_ITER_TOL * max(abs(new_estimate), 1e-300):
            estimate = new_estimate
            break
        estimate = new_estimate
    # the Rayleigh quotient at the final vector is at least as sharp
    return max(estimate, float(np.sum((data @ v) ** 2)))


def export_matrix(A: SensingMatrix, path: str, fmt: str = "bin") -> None:
    """
    Dump a matrix for cross-implementation comparison.

    Binary layout: magic ``SDMX``, uint64 M, uint64 N, uint8 kind code,
    int64 seed (-1 when unknown), then M*N little-endian float64 values in
    row-major order. The CSV variant writes the same header as a ``#``
    comment line followed by one matrix row per line.
    """
    seed = -1 if A.seed is None else int(A.seed)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    if fmt == "bin":
        with open(path, "wb") as f:
            f.write(_DUMP_HEADER.pack(DUMP_MAGIC, A.M, A.N, _KIND_CODES[A.kind], seed))
            f.write(np.ascontiguousarray(A.data, dtype="<f8").tobytes(order="C"))
    elif fmt == "csv":
        header = f"SDMX,M={A.M},N={A.N},kind={A.kind.value},seed={seed}"
        np.savetxt(path, A.data, fmt="%.17e", delimiter=",", header=header, comments="# ")
    else:
        raise ParameterError(f"unknown matrix dump format {fmt!r}; use 'bin' or 'csv'")


def load_matrix(path: str) -> SensingMatrix:
    """Read a dump written by ``export_matrix`` (format detected from content)."""
    with open(path, "rb") as f:
        head = f.read(_DUMP_HEADER.size)
        if head[:4] == DUMP_MAGIC:
            _, M, N, code, seed = _DUMP_HEADER.unpack(head)
            values = np.frombuffer(f.read(), dtype="<f8")
            if values.size != M * N:
                raise ParameterError(
                    f"{path}: expected {M * N} values, found {values.size}"
                )
            kind = {v: k for k, v in _KIND_CODES.items()}[code]
            return SensingMatrix(values.reshape(M, N), kind, None if seed < 0 else seed)

    with open(path, "r") as f:
        first = f.readline()
    if not first.startswith("# SDMX"):
        raise ParameterError(f"{path} is not a matrix dump (missing SDMX header)")
    fields = dict(item.split("=", 1) for item in first[2:].strip().split(",")[1:])
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape != (int(fields["M"]), int(fields["N"])):
        raise ParameterError(f"{path}: header shape does not match data shape {data.shape}")
    seed = int(fields["seed"])
    return SensingMatrix(data, MatrixKind(fields["kind"]), None if seed < 0 else seed)


if __name__ == "__main__":
    # Example usage
    A = gen_gaussian(64, 256, seed=7)
    print(f"Gaussian ||A||_2^2: {spectral_norm_sq(A):.6f}")
    D = gen_partial_dct(64, 256, seed=7)
    print(f"Partial DCT ||A||_2^2: {spectral_norm_sq(D):.12f}")
    x = gen_sparse_signal(256, 8, seed=7)
    print(f"Signal support: {np.flatnonzero(x)}")
