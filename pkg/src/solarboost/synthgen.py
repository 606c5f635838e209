"""Synthetic benchmark data: uniform inputs, drifting capacities, a known unit response.

Random streams come from ``numpy.random.PCG64`` seeded through
``SeedSequence([seed, stream])`` with stream 0 for inputs and stream 1 for
capacities, so features and capacities can be regenerated independently.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .core import AggregateOutputSeries, CapacityMatrix, Dataset, GridFeatureTensor

GENERATOR_NAME = "numpy.random.PCG64"
GENERATOR_VERSION = 1
INPUT_STREAM, CAPACITY_STREAM = 0, 1
KALMAN_DECAY = 0.9
KALMAN_MEAS_SCALE = 0.1


class Process(str, enum.Enum):
    AR1 = "ar1"
    KALMAN = "kalman"


@dataclass(frozen=True)
class GenSpec:
    T_blocks: int = 300
    repeat: int = 96
    K: int = 15
    D: int = 3
    sigma: float = 0.01
    process: Process = Process.AR1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "process", Process(self.process))
        for name in ("T_blocks", "repeat", "K", "D"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def T(self) -> int:
        return self.T_blocks * self.repeat

    def to_dict(self) -> dict:
        d = asdict(self)
        d["process"] = self.process.value
        return d


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


def gen_inputs(spec: GenSpec) -> GridFeatureTensor:
    rng = rng_for(spec.seed, INPUT_STREAM)
    return GridFeatureTensor(rng.random((spec.T, spec.K, spec.D)))


def _repeat_rows(series: np.ndarray, repeat: int) -> CapacityMatrix:
    vals = np.repeat(series, repeat, axis=0)
    return CapacityMatrix(vals, vals.sum(axis=1))


def gen_capacity_ar1(spec: GenSpec) -> CapacityMatrix:
    """Independent AR(1) capacity per grid, one value per block, clamped at zero."""
    rng = rng_for(spec.seed, CAPACITY_STREAM)
    K, s = spec.K, spec.sigma
    phi = rng.normal(1.0, s, K)
    c = np.empty((spec.T_blocks, K))
    c[0] = rng.random(K)
    eps = rng.normal(0.0, s, (spec.T_blocks, K))
    for b in range(1, spec.T_blocks):
        c[b] = np.maximum(phi * c[b - 1] + eps[b], 0.0)
    return _repeat_rows(c, spec.repeat)


def kalman_process_cov(K: int, sigma: float) -> np.ndarray:
    idx = np.arange(K)
    return sigma ** 2 * KALMAN_DECAY ** np.abs(idx[:, None] - idx[None, :])


def gen_capacity_kalman(spec: GenSpec, return_measurements: bool = False):
    """Correlated random-walk capacities.

    The state follows ``c_b = c_{b-1} + w_b`` with ``w ~ N(0, Q)``,
    ``Q_ij = sigma^2 0.9^|i-j|``; the noisy identity observations with
    covariance ``0.1 sigma^2 I`` are simulated but only returned on request.
    The state (not the measurement) is the truth.
    """
    rng = rng_for(spec.seed, CAPACITY_STREAM)
    K = spec.K
    Q = kalman_process_cov(K, spec.sigma)
    w, V = np.linalg.eigh(Q)
    factor = V * np.sqrt(np.maximum(w, 0.0))
    c = np.empty((spec.T_blocks, K))
    c[0] = rng.random(K)
    z = rng.standard_normal((spec.T_blocks, K))
    for b in range(1, spec.T_blocks):
        c[b] = np.maximum(c[b - 1] + factor @ z[b], 0.0)
    meas = c + np.sqrt(KALMAN_MEAS_SCALE) * spec.sigma * rng.standard_normal(c.shape)
    caps = _repeat_rows(c, spec.repeat)
    if return_measurements:
        return caps, meas
    return caps


def unit_response(x) -> np.ndarray:
    """``sin(x0) + x1 + x2^2``; works on a single vector or on the last axis of an array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"unit response needs 3 features, got {x.shape[-1]}")
    return np.sin(x[..., 0]) + x[..., 1] + x[..., 2] ** 2


def assemble(features: GridFeatureTensor, capacities: CapacityMatrix) -> Dataset:
    T, K, _ = features.shape
    if capacities.shape != (T, K):
        raise ValueError(f"capacities {capacities.shape} do not match features {(T, K)}")
    unit = unit_response(features.values)
    Y = np.einsum("tk,tk->t", capacities.values, unit)
    return Dataset(features, AggregateOutputSeries(Y), capacities.totals, capacities, unit)


def gen_capacities(spec: GenSpec) -> CapacityMatrix:
    if spec.process is Process.AR1:
        return gen_capacity_ar1(spec)
    return gen_capacity_kalman(spec)


def generate(spec: GenSpec) -> Dataset:
    return assemble(gen_inputs(spec), gen_capacities(spec))
