"""Alternating training loop: one Newton tree, then one capacity refresh, per round."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .capfilter import expand_blocks, filter_blocks, project_capacity
from .core import CapacityMatrix, Dataset, GridFeatureTensor, HyperParams, make_blocks
from .gbtree import RegressionTreeEnsemble, TreeBuilder
from .surrogate import block_information, grad_hess_batch

log = logging.getLogger(__name__)

ProgressSink = Callable[[int, float, float], None]


class TrainingDivergedError(FloatingPointError):
    def __init__(self, round_index: int, what: str):
        super().__init__(f"non-finite {what} at round {round_index}")
        self.round_index = round_index


@dataclass
class SolarBoostModel:
    ensemble: RegressionTreeEnsemble
    capacities: CapacityMatrix
    hyper: HyperParams
    feature_dim: int
    grid_count: int
    training_T: int
    curve: list = field(default_factory=list)
    train_rmse: list = field(default_factory=list)

    kind = "solarboost"

    def unit_output(self, X) -> np.ndarray:
        """Per-unit-capacity output for rows of features."""
        X = np.asarray(X, dtype=float)
        return self.ensemble.predict(X.reshape(-1, self.feature_dim)).reshape(X.shape[:-1])

    def latest_capacity(self) -> np.ndarray:
        return self.capacities.values[-1]


def _objective(Y, c, f):
    with np.errstate(over="ignore", invalid="ignore"):
        resid = Y - np.einsum("tk,tk->t", c, f)
        return float(resid @ resid), resid


def train(ds: Dataset, hyper: HyperParams, progress_sink: Optional[ProgressSink] = None) -> SolarBoostModel:
    T, K, D = ds.features.shape
    if hyper.grid_count is not None and hyper.grid_count != K:
        raise ValueError(f"hyper.grid_count={hyper.grid_count} but dataset has K={K}")
    Y = ds.Y
    totals = ds.totals
    blocks = make_blocks(T, hyper.block_len)
    eta = hyper.learning_rate

    c = CapacityMatrix.uniform(totals, K)
    init = np.full(K, totals[0] / K)
    ens = RegressionTreeEnsemble(eta)
    builder = TreeBuilder(ds.features.rows()) if hyper.n_rounds > 0 else None
    pred = np.zeros((T, K))

    obj, resid = _objective(Y, c.values, pred)
    curve = [obj]
    rmse = [float(np.sqrt(obj / T))]
    if progress_sink is not None:
        progress_sink(0, obj, rmse[-1])

    for n in range(1, hyper.n_rounds + 1):
        g, h = grad_hess_batch(c.values, pred, Y)
        tree, leaves = builder.fit(
            g.ravel(), h.ravel(), hyper.max_depth, hyper.tree_reg, hyper.min_gain
        )
        raw = tree.value[leaves].reshape(T, K)
        if not np.all(np.isfinite(raw)):
            raise TrainingDivergedError(n, "tree output")
        ens.append(tree)

        if n % hyper.capacity_refresh_every == 0 or n == hyper.n_rounds:
            with np.errstate(over="ignore", invalid="ignore"):
                mats, vecs = block_information(pred, raw, Y, blocks, hyper.pd_floor)
            if not (np.all(np.isfinite(mats)) and np.all(np.isfinite(vecs))):
                raise TrainingDivergedError(n, "capacity information")
            try:
                means = filter_blocks(mats, vecs, totals, blocks, hyper.lam, init)
            except (FloatingPointError, np.linalg.LinAlgError) as exc:
                raise TrainingDivergedError(n, "capacity estimate") from exc
            c = expand_blocks(means, totals, blocks)

        pred = pred + eta * raw
        obj, resid = _objective(Y, c.values, pred)
        if not np.isfinite(obj):
            raise TrainingDivergedError(n, "objective")
        curve.append(obj)
        rmse.append(float(np.sqrt(obj / T)))
        if progress_sink is not None:
            progress_sink(n, obj, rmse[-1])
        if n % 100 == 0:
            log.debug("round %d objective %.6g rmse %.6g", n, obj, rmse[-1])

    return SolarBoostModel(ens, c, hyper, D, K, T, curve, rmse)


def predict(model: SolarBoostModel, features, totals=None) -> np.ndarray:
    """Forecast aggregates with the last training capacity row.

    When ``totals`` is given the capacity shares are kept and rescaled to each
    step's total.
    """
    x = features.values if isinstance(features, GridFeatureTensor) else np.asarray(features, dtype=float)
    if x.ndim != 3 or x.shape[1] != model.grid_count or x.shape[2] != model.feature_dim:
        raise ValueError(
            f"features shape {x.shape} does not match model (K={model.grid_count}, D={model.feature_dim})"
        )
    f = model.unit_output(x)
    cT = model.latest_capacity()
    if totals is None:
        return f @ cT
    totals = np.asarray(totals, dtype=float)
    if totals.shape != (x.shape[0],):
        raise ValueError("totals length must match the forecast horizon")
    shares = project_capacity(cT, 1.0)
    return (f @ shares) * totals


def forecast_capacities(model: SolarBoostModel, totals) -> CapacityMatrix:
    """Capacity rows used for a forecast: last training shares times each step's total."""
    totals = np.asarray(totals, dtype=float)
    shares = project_capacity(model.latest_capacity(), 1.0)
    return CapacityMatrix(totals[:, None] * shares[None, :], totals)


def training_curve(model: SolarBoostModel) -> np.ndarray:
    """Total true objective before training and after every round."""
    return np.asarray(model.curve)
