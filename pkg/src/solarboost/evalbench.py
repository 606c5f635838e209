"""Metrics, method comparison harness, drift and noise experiments, ablation sweeps."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import solver
from .baselines import (
    BaselineKind, flatten_features, predict_baseline, train_baseline,
    uniform_capacities,
)
from .capfilter import project_capacity
from .core import CapacityMatrix, Dataset, GridFeatureTensor, HyperParams, split_train_test
from .gbtree import boost_squared_error
from .synthgen import GenSpec, assemble, gen_capacities, generate, rng_for, unit_response

CAPACITY_SCALE = 100.0


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    max: Optional[float] = None
    min: Optional[float] = None
    mean: Optional[float] = None


def rmse(truth, pred) -> float:
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("rmse of an empty series")
    d = truth - pred
    return float(np.sqrt(np.mean(d * d)))


def capacity_rmse(truth: CapacityMatrix, est, scale: float = CAPACITY_SCALE) -> float:
    """RMSE of capacity shares ``c / C_t`` over all (t, i), times ``scale`` (100 by default)."""
    est_vals = est.values if isinstance(est, CapacityMatrix) else np.asarray(est, dtype=float)
    if est_vals.shape != truth.shape:
        raise ValueError(f"capacity dims differ: {truth.shape} vs {est_vals.shape}")
    C = truth.totals[:, None]
    return scale * rmse(truth.values / C, est_vals / C)


def unit_output_report(truth_unit, pred_unit) -> MetricReport:
    pred = np.asarray(pred_unit, dtype=float)
    return MetricReport(rmse(truth_unit, pred), float(pred.max()), float(pred.min()), float(pred.mean()))


def scaling_counterexample(c_prev, c_next, f_vals) -> tuple[float, float]:
    """Total-capacity rescaling of the old aggregate vs the true new aggregate."""
    c_prev = np.asarray(c_prev, dtype=float)
    c_next = np.asarray(c_next, dtype=float)
    f = np.asarray(f_vals, dtype=float)
    if not c_prev.shape == c_next.shape == f.shape:
        raise ValueError("c_prev, c_next and f_vals must have the same length")
    if c_prev.sum() == 0:
        raise ValueError("previous total capacity is zero")
    r = c_next.sum() / c_prev.sum()
    return float(r * (c_prev @ f)), float(c_next @ f)


def thm1_sample_bound(K, sigma_c, M, r, epsilon, C_t, sigma_f) -> Optional[float]:
    """Sample size beyond which per-grid modelling has the tighter error bound.

    ``N >~ K sigma_c^2 M^2 / (r^2 K^2 (1+K)^2 eps^2 M^2 - C_t^2 sigma_f^2)``.
    Returns ``None`` when the denominator is not positive (no such N).
    """
    if K <= 0 or M <= 0:
        raise ValueError("K and M must be positive")
    if min(sigma_c, r, epsilon, C_t, sigma_f) < 0:
        raise ValueError("inputs must be nonnegative")
    denom = r ** 2 * K ** 2 * (1 + K) ** 2 * epsilon ** 2 * M ** 2 - C_t ** 2 * sigma_f ** 2
    if denom <= 0:
        return None
    return K * sigma_c ** 2 * M ** 2 / denom


# -- method comparison -------------------------------------------------------

def evaluate_solarboost(model, test: Dataset) -> dict:
    out = {"aggregate_rmse": rmse(test.Y, solver.predict(model, test.features, test.totals))}
    if test.truth_capacities is not None:
        est = solver.forecast_capacities(model, test.totals)
        out["capacity_rmse"] = capacity_rmse(test.truth_capacities, est)
        out["capacity_rmse_raw"] = capacity_rmse(test.truth_capacities, est, scale=1.0)
    if test.truth_unit is not None:
        rep = unit_output_report(test.truth_unit[:, 0], model.unit_output(test.features.values[:, 0, :]))
        out.update(unit_rmse=rep.rmse, unit_max=rep.max, unit_min=rep.min, unit_mean=rep.mean)
    return out


def evaluate_baseline(model, test: Dataset) -> dict:
    kind = model.kind
    out = {}
    if kind is BaselineKind.IDEAL_FIT:
        if test.truth_capacities is not None:
            out["aggregate_rmse"] = rmse(
                test.Y, predict_baseline(model, test.features, capacities=test.truth_capacities.values)
            )
    else:
        out["aggregate_rmse"] = rmse(test.Y, predict_baseline(model, test.features, test.totals))
    if kind is BaselineKind.AVERAGE_GRID and test.truth_capacities is not None:
        est = uniform_capacities(test.totals, test.K)
        out["capacity_rmse"] = capacity_rmse(test.truth_capacities, est)
        out["capacity_rmse_raw"] = capacity_rmse(test.truth_capacities, est, scale=1.0)
    if kind is not BaselineKind.FLATTEN_GRID and test.truth_unit is not None:
        rep = unit_output_report(test.truth_unit[:, 0], model.unit_output(test.features.values[:, 0, :]))
        out.update(unit_rmse=rep.rmse, unit_max=rep.max, unit_min=rep.min, unit_mean=rep.mean)
    return out


def evaluate_model(model, test: Dataset) -> dict:
    if isinstance(model, solver.SolarBoostModel):
        return evaluate_solarboost(model, test)
    return evaluate_baseline(model, test)


def compare_methods(train: Dataset, test: Dataset, hyper: HyperParams,
                    methods: Sequence[str] = ("solarboost", "average_grid", "flatten_grid")) -> dict:
    """Train each named method on ``train`` and return its test metrics keyed by name."""
    results = {}
    for name in methods:
        if name == "solarboost":
            model = solver.train(train, hyper)
        else:
            model = train_baseline(name, train, hyper)
        results[name] = evaluate_model(model, test)
    return results


def train_test(spec: GenSpec, test_blocks: int) -> tuple[Dataset, Dataset]:
    ds = generate(spec)
    return split_train_test(ds, ds.T - test_blocks * spec.repeat)


# -- observation 2 -------------------------------------------------------------

def make_shift_dataset(T_blocks: int = 60, repeat: int = 48, start_share: float = 0.85,
                       end_share: float = 0.15, total: float = 1.0, seed: int = 0) -> Dataset:
    """Two grids trading capacity linearly over time while the total stays fixed."""
    rng = rng_for(seed, 0)
    x = rng.random((T_blocks * repeat, 2, 3))
    s = np.linspace(start_share, end_share, T_blocks)
    caps = np.repeat(np.stack([s, 1.0 - s], axis=1) * total, repeat, axis=0)
    return assemble(GridFeatureTensor(x), CapacityMatrix(caps, caps.sum(axis=1)))


def train_rescaling_predictor(train: Dataset, hyper: HyperParams):
    """Flattened-input regression of ``Y / C`` whose forecasts are rescaled by the new total."""
    return boost_squared_error(
        flatten_features(train.features), train.Y / train.totals, hyper.n_rounds,
        hyper.learning_rate, hyper.max_depth, hyper.tree_reg, hyper.min_gain,
    )


def predict_rescaling(ens, features, totals) -> np.ndarray:
    return ens.predict(flatten_features(features)) * np.asarray(totals, dtype=float)


def observation2_experiment(ds: Dataset, train_len: int, hyper: HyperParams) -> dict:
    train, test = split_train_test(ds, train_len)
    sb = solver.train(train, hyper)
    resc = train_rescaling_predictor(train, hyper)
    return {
        "solarboost_rmse": rmse(test.Y, solver.predict(sb, test.features, test.totals)),
        "rescaling_rmse": rmse(test.Y, predict_rescaling(resc, test.features, test.totals)),
    }


# -- drift and noise experiments ---------------------------------------------

def thm1_drift_experiment(base_spec: GenSpec, sigmas: Sequence[float], hyper: HyperParams,
                          seeds: Sequence[int] = (0, 1, 2), test_blocks: int = 20) -> list[dict]:
    """Test-RMSE gap (AverageGrid minus SolarBoost) as capacity drift grows.

    One row per sigma with the per-seed gaps and their median.
    """
    if len(sigmas) < 2:
        raise ValueError("need at least two sigma values")
    rows = []
    for sigma in sigmas:
        gaps, avg, sb = [], [], []
        for seed in seeds:
            train, test = train_test(replace(base_spec, sigma=sigma, seed=seed), test_blocks)
            res = compare_methods(train, test, hyper, ("solarboost", "average_grid"))
            avg.append(res["average_grid"]["aggregate_rmse"])
            sb.append(res["solarboost"]["aggregate_rmse"])
            gaps.append(avg[-1] - sb[-1])
        rows.append({
            "sigma": sigma,
            "seeds": " ".join(str(s) for s in seeds),
            "average_grid_rmse": float(np.median(avg)),
            "solarboost_rmse": float(np.median(sb)),
            "gap": float(np.median(gaps)),
            "gaps": " ".join(repr(g) for g in gaps),
        })
    return rows


def spread_inputs(T: int, K: int, D: int, spread: float, rng) -> np.ndarray:
    """Per-step common level plus grid-specific deviations of width ``spread``."""
    level = rng.random((T, 1, D))
    return level + spread * (rng.random((T, K, D)) - 0.5)


def thm2_variance_experiment(spec: GenSpec, noise_levels: Sequence[float], input_spread: Sequence[float],
                             seeds: Sequence[int] = (0, 1, 2)) -> list[dict]:
    """RMSE added by noisy capacities, for each (input spread, capacity noise) pair.

    The true capacities are perturbed by zero-sum Gaussian noise of relative
    size ``noise`` (totals preserved) and the aggregate is predicted with the
    true unit function; inflation is the RMSE against the noiseless aggregate.
    """
    if not noise_levels or not input_spread:
        raise ValueError("noise_levels and input_spread must be non-empty")
    rows = []
    for spread in input_spread:
        for noise in noise_levels:
            infl = []
            for seed in seeds:
                rng = rng_for(seed, 7)
                s = replace(spec, seed=seed)
                caps = gen_capacities(s)
                x = spread_inputs(s.T, s.K, s.D, spread, rng)
                f = unit_response(x)
                exact = np.einsum("tk,tk->t", caps.values, f)
                eps = rng.normal(0.0, noise, caps.shape) * caps.totals[:, None] / s.K
                eps -= eps.mean(axis=1, keepdims=True)
                noisy = np.array([project_capacity(row, C) for row, C in zip(caps.values + eps, caps.totals)])
                infl.append(rmse(exact, np.einsum("tk,tk->t", noisy, f)))
            rows.append({
                "input_spread": spread,
                "noise": noise,
                "seeds": " ".join(str(x) for x in seeds),
                "inflation": float(np.median(infl)),
            })
    return rows


# -- ablations -----------------------------------------------------------------

class SweepParam(str, enum.Enum):
    GRID_COUNT = "grid_count"
    LAMBDA = "lambda"


def regroup_grids(ds: Dataset, K_new: int) -> Dataset:
    """Merge contiguous grids into ``K_new`` groups: capacities add, features average."""
    if not 1 <= K_new <= ds.K:
        raise ValueError(f"K_new must lie in [1, {ds.K}]")
    groups = np.array_split(np.arange(ds.K), K_new)
    x = np.stack([ds.features.values[:, g, :].mean(axis=1) for g in groups], axis=1)
    caps = unit = None
    if ds.truth_capacities is not None:
        cv = ds.truth_capacities.values
        gc = np.stack([cv[:, g].sum(axis=1) for g in groups], axis=1)
        caps = CapacityMatrix(gc, ds.totals)
        if ds.truth_unit is not None:
            num = np.stack([(cv[:, g] * ds.truth_unit[:, g]).sum(axis=1) for g in groups], axis=1)
            unit = np.divide(num, gc, out=np.zeros_like(num), where=gc > 0)
    return Dataset(GridFeatureTensor(x), ds.outputs, ds.totals, caps, unit)


def sweep(param, values: Iterable, ds: Dataset, hyper: HyperParams, train_len: int) -> list[dict]:
    """Train SolarBoost once per value and report its aggregate test RMSE."""
    param = SweepParam(param)
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for v in values:
        if param is SweepParam.LAMBDA:
            data, hp = ds, hyper.with_(lam=float(v), grid_count=None)
        else:
            data, hp = regroup_grids(ds, int(v)), hyper.with_(grid_count=None)
        train, test = split_train_test(data, train_len)
        model = solver.train(train, hp)
        rows.append({
            param.value: v,
            "seed": hyper.seed,
            "test_rmse": rmse(test.Y, solver.predict(model, test.features, test.totals)),
        })
    return rows


def lambda_curve_shape(rows: list[dict], flat_tol: float = 0.05) -> str:
    """Classify a lambda sweep as ``"interior"``, ``"flat"`` or ``"boundary"``.

    ``interior``: the minimum is at neither end.  ``flat``: the three best
    values lie within ``flat_tol`` of the best.
    """
    r = np.array([row["test_rmse"] for row in rows])
    best = int(np.argmin(r))
    if 0 < best < len(r) - 1:
        return "interior"
    top3 = np.sort(r)[:3]
    if len(top3) == 3 and top3[-1] <= (1.0 + flat_tol) * top3[0]:
        return "flat"
    return "boundary"


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
