"""Shared domain types: feature tensors, capacities, block layout, datasets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

ROW_SUM_RTOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValueError(f"{name} has a non-finite value at index {tuple(int(i) for i in bad)}")


@dataclass(frozen=True)
class GridFeatureTensor:
    """Per-grid covariates ``x[t, i, d]`` with shape ``(T, K, D)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"features must be a non-empty (T, K, D) array, got shape {v.shape}")
        _check_finite(v, "features")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @property
    def D(self) -> int:
        return self.values.shape[2]

    def __getitem__(self, idx):
        return self.values[idx]

    def rows(self) -> np.ndarray:
        """All ``(t, i)`` feature vectors stacked time-major into a ``(T*K, D)`` matrix."""
        return self.values.reshape(-1, self.D)


@dataclass(frozen=True)
class AggregateOutputSeries:
    """Aggregate output ``Y_t`` for each time step."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("outputs must be a non-empty 1-D array")
        _check_finite(v, "outputs")
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class CapacityMatrix:
    """Nonnegative capacities ``c[t, i]`` whose rows sum to ``totals[t]``."""

    values: np.ndarray
    totals: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        tot = np.asarray(self.totals, dtype=float)
        if v.ndim != 2 or tot.ndim != 1 or v.shape[0] != tot.shape[0]:
            raise ValueError(f"capacity shape {v.shape} does not match totals shape {tot.shape}")
        _check_finite(v, "capacities")
        _check_finite(tot, "totals")
        if np.any(tot <= 0):
            t = int(np.argmax(tot <= 0))
            raise ValueError(f"total capacity must be positive (row {t}: {tot[t]})")
        if np.any(v < 0):
            t, i = np.argwhere(v < 0)[0]
            raise ValueError(f"negative capacity at row {t}, grid {i}: {v[t, i]}")
        gap = np.abs(v.sum(axis=1) - tot)
        tol = ROW_SUM_RTOL * np.maximum(1.0, tot)
        if np.any(gap > tol):
            t = int(np.argmax(gap - tol))
            raise ValueError(f"row {t} sums to {v[t].sum()!r}, expected total {tot[t]!r}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "totals", _frozen(tot))

    @classmethod
    def from_values(cls, values) -> "CapacityMatrix":
        v = np.asarray(values, dtype=float)
        return cls(v, v.sum(axis=1))

    @classmethod
    def uniform(cls, totals, K: int) -> "CapacityMatrix":
        tot = np.asarray(totals, dtype=float)
        return cls(np.repeat(tot[:, None] / K, K, axis=1), tot)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def shares(self) -> np.ndarray:
        return self.values / self.totals[:, None]


@dataclass(frozen=True)
class BlockStructure:
    """Half-open ranges ``[start, stop)`` of length ``block_len`` tiling ``[0, T)``."""

    T: int
    block_len: int
    boundaries: tuple = field(init=False)

    def __post_init__(self):
        if self.T < 1 or self.block_len < 1:
            raise ValueError(f"need T >= 1 and block_len >= 1, got T={self.T}, s={self.block_len}")
        starts = range(0, self.T, self.block_len)
        object.__setattr__(
            self, "boundaries", tuple((a, min(a + self.block_len, self.T)) for a in starts)
        )

    def __len__(self):
        return len(self.boundaries)

    def __iter__(self):
        return iter(self.boundaries)

    def block_ids(self) -> np.ndarray:
        """Block index of every time step."""
        return np.arange(self.T) // self.block_len

    def starts(self) -> np.ndarray:
        return np.array([a for a, _ in self.boundaries], dtype=np.intp)


def make_blocks(T: int, s: int) -> BlockStructure:
    return BlockStructure(int(T), int(s))


@dataclass(frozen=True)
class HyperParams:
    """Training knobs shared by SolarBoost and the tree baselines.

    ``pd_floor`` is relative: the eigenvalue floor applied to each step's
    observation matrix is ``pd_floor * (1 + trace / K)``.
    ``grid_count`` of ``None`` means "take K from the data".
    """

    lam: float = 10.0
    n_rounds: int = 1000
    learning_rate: float = 0.01
    max_depth: int = 3
    tree_reg: float = 1.0
    min_gain: float = 0.0
    grid_count: Optional[int] = None
    block_len: int = 96
    pd_floor: float = 1e-6
    seed: int = 0
    capacity_refresh_every: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.n_rounds < 0:
            raise ValueError(f"n_rounds must be >= 0, got {self.n_rounds}")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate must lie in [0, 1], got {self.learning_rate}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.tree_reg < 0 or self.min_gain < 0:
            raise ValueError("tree_reg and min_gain must be nonnegative")
        if self.grid_count is not None and self.grid_count < 1:
            raise ValueError("grid_count must be positive")
        if self.block_len < 1:
            raise ValueError("block_len must be positive")
        if not self.pd_floor > 0:
            raise ValueError("pd_floor must be positive")
        if self.capacity_refresh_every < 1:
            raise ValueError("capacity_refresh_every must be positive")

    def with_(self, **kw) -> "HyperParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class Dataset:
    """Features, aggregate outputs and known totals; truth fields only for synthetic data."""

    features: GridFeatureTensor
    outputs: AggregateOutputSeries
    totals: np.ndarray
    truth_capacities: Optional[CapacityMatrix] = None
    truth_unit: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.features, GridFeatureTensor):
            object.__setattr__(self, "features", GridFeatureTensor(self.features))
        if not isinstance(self.outputs, AggregateOutputSeries):
            object.__setattr__(self, "outputs", AggregateOutputSeries(self.outputs))
        tot = np.asarray(self.totals, dtype=float)
        T, K, _ = self.features.shape
        if len(self.outputs) != T:
            raise ValueError(f"outputs length {len(self.outputs)} != feature T {T}")
        if tot.shape != (T,):
            raise ValueError(f"totals shape {tot.shape} != ({T},)")
        _check_finite(tot, "totals")
        if np.any(tot <= 0):
            raise ValueError("totals must be positive")
        object.__setattr__(self, "totals", _frozen(tot))
        if self.truth_capacities is not None:
            if self.truth_capacities.shape != (T, K):
                raise ValueError("truth capacities do not match feature dims")
            if not np.array_equal(self.truth_capacities.totals, tot):
                raise ValueError("truth capacity totals differ from dataset totals")
        if self.truth_unit is not None:
            u = np.asarray(self.truth_unit, dtype=float)
            if u.shape != (T, K):
                raise ValueError("truth_unit does not match feature dims")
            _check_finite(u, "truth_unit")
            object.__setattr__(self, "truth_unit", _frozen(u))

    @property
    def T(self) -> int:
        return self.features.T

    @property
    def K(self) -> int:
        return self.features.K

    @property
    def D(self) -> int:
        return self.features.D

    @property
    def Y(self) -> np.ndarray:
        return self.outputs.values

    @property
    def is_synthetic(self) -> bool:
        return self.truth_capacities is not None

    def slice(self, start: int, stop: int) -> "Dataset":
        caps = self.truth_capacities
        return Dataset(
            GridFeatureTensor(self.features.values[start:stop]),
            AggregateOutputSeries(self.outputs.values[start:stop]),
            self.totals[start:stop],
            None if caps is None else CapacityMatrix(caps.values[start:stop], caps.totals[start:stop]),
            None if self.truth_unit is None else self.truth_unit[start:stop],
        )


def split_train_test(ds: Dataset, train_len: int) -> tuple[Dataset, Dataset]:
    if not 0 < train_len < ds.T:
        raise ValueError(f"train_len must satisfy 0 < train_len < {ds.T}, got {train_len}")
    return ds.slice(0, train_len), ds.slice(train_len, ds.T)


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Join two consecutive datasets along time."""
    cat = np.concatenate
    caps = None
    if a.truth_capacities is not None and b.truth_capacities is not None:
        caps = CapacityMatrix(
            cat([a.truth_capacities.values, b.truth_capacities.values]),
            cat([a.truth_capacities.totals, b.truth_capacities.totals]),
        )
    unit = None
    if a.truth_unit is not None and b.truth_unit is not None:
        unit = cat([a.truth_unit, b.truth_unit])
    return Dataset(
        GridFeatureTensor(cat([a.features.values, b.features.values])),
        AggregateOutputSeries(cat([a.Y, b.Y])),
        cat([a.totals, b.totals]),
        caps,
        unit,
    )
