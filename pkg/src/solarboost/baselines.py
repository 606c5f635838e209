"""AverageGrid, FlattenGrid and IdealFit reference models on the same tree engine."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import Dataset, GridFeatureTensor, HyperParams
from .gbtree import RegressionTreeEnsemble, boost_squared_error


class BaselineKind(str, enum.Enum):
    AVERAGE_GRID = "average_grid"
    FLATTEN_GRID = "flatten_grid"
    IDEAL_FIT = "ideal_fit"


def _values(features) -> np.ndarray:
    if isinstance(features, GridFeatureTensor):
        return features.values
    return np.asarray(features, dtype=float)


def average_features(features) -> np.ndarray:
    """Grid-mean feature matrix, shape ``(T, D)``."""
    return _values(features).mean(axis=1)


def flatten_features(features) -> np.ndarray:
    """Concatenate grids per step, grid-major: column ``i * D + d`` holds ``x[t, i, d]``."""
    x = _values(features)
    return x.reshape(x.shape[0], -1)


def unflatten_features(flat, K: int) -> np.ndarray:
    flat = np.asarray(flat, dtype=float)
    return flat.reshape(flat.shape[0], K, -1)


@dataclass
class BaselineModel:
    kind: BaselineKind
    ensemble: RegressionTreeEnsemble
    feature_dim: int
    grid_count: int
    per_unit_target: bool = True

    @property
    def input_dim(self) -> int:
        if self.kind is BaselineKind.FLATTEN_GRID:
            return self.grid_count * self.feature_dim
        return self.feature_dim

    @property
    def feature_layout(self) -> str:
        return {
            BaselineKind.AVERAGE_GRID: "grid mean (D)",
            BaselineKind.FLATTEN_GRID: "grid-major concat (K*D)",
            BaselineKind.IDEAL_FIT: "per grid (D)",
        }[self.kind]

    def unit_output(self, X) -> np.ndarray:
        """Per-unit output on rows of single-grid features (not defined for FLATTEN_GRID)."""
        if self.kind is BaselineKind.FLATTEN_GRID:
            raise ValueError("FlattenGrid has no per-unit output function")
        X = np.asarray(X, dtype=float)
        return self.ensemble.predict(X.reshape(-1, self.feature_dim)).reshape(X.shape[:-1])


def train_baseline(kind, ds: Dataset, hyper: HyperParams, per_unit_target: bool = True) -> BaselineModel:
    """Fit a baseline with squared loss.

    AverageGrid regresses ``Y / C`` on the grid-mean features (or raw ``Y``
    with ``per_unit_target=False``); FlattenGrid regresses ``Y`` on the
    concatenated features; IdealFit regresses the true per-grid responses on
    per-grid features and needs ``ds.truth_unit``.
    """
    kind = BaselineKind(kind)
    fit = dict(
        n_rounds=hyper.n_rounds, learning_rate=hyper.learning_rate, max_depth=hyper.max_depth,
        tree_reg=hyper.tree_reg, min_gain=hyper.min_gain,
    )
    if kind is BaselineKind.AVERAGE_GRID:
        target = ds.Y / ds.totals if per_unit_target else ds.Y
        ens = boost_squared_error(average_features(ds.features), target, **fit)
    elif kind is BaselineKind.FLATTEN_GRID:
        ens = boost_squared_error(flatten_features(ds.features), ds.Y, **fit)
    else:
        if ds.truth_unit is None:
            raise ValueError("IdealFit needs the true per-grid responses (truth_unit)")
        ens = boost_squared_error(ds.features.rows(), ds.truth_unit.ravel(), **fit)
    return BaselineModel(kind, ens, ds.D, ds.K, per_unit_target)


def predict_baseline(model: BaselineModel, features, totals=None, capacities=None) -> np.ndarray:
    """Aggregate forecasts.

    AverageGrid scales by ``totals`` when trained on the per-unit target;
    IdealFit needs the (true) ``capacities`` array of shape ``(T, K)``.
    """
    x = _values(features)
    if x.ndim != 3 or x.shape[1] != model.grid_count or x.shape[2] != model.feature_dim:
        raise ValueError(
            f"features shape {x.shape} does not match the {model.kind.value} layout "
            f"(K={model.grid_count}, D={model.feature_dim})"
        )
    if model.kind is BaselineKind.AVERAGE_GRID:
        f = model.ensemble.predict(average_features(x))
        if not model.per_unit_target:
            return f
        if totals is None:
            raise ValueError("AverageGrid prediction needs the total capacities")
        return np.asarray(totals, dtype=float) * f
    if model.kind is BaselineKind.FLATTEN_GRID:
        return model.ensemble.predict(flatten_features(x))
    if capacities is None:
        raise ValueError("IdealFit aggregate prediction needs the capacities")
    f = model.unit_output(x)
    return np.einsum("tk,tk->t", np.asarray(capacities, dtype=float), f)


def uniform_capacities(totals, K: int) -> np.ndarray:
    """The capacity split AverageGrid implies: ``C_t / K`` for every grid."""
    totals = np.asarray(totals, dtype=float)
    return np.repeat(totals[:, None] / K, K, axis=1)
