"""On-disk formats for datasets and trained models.

Dataset directory::

    features.csv    t,i,d0..d{D-1}     one row per (t, i), time-major
    outputs.csv     t,Y,C_total
    capacities.csv  t,c0..c{K-1}       only for synthetic data (truth)
    unit.csv        t,y0..y{K-1}       only for synthetic data (truth)
    manifest.json   generator name/version, GenSpec, seed, dims

Floats are written with 17 significant digits so values reload bit-exactly.
CSV files use ',' separators, '\\n' line endings and a header row.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .baselines import BaselineKind, BaselineModel
from .core import AggregateOutputSeries, CapacityMatrix, Dataset, GridFeatureTensor, HyperParams
from .gbtree import RegressionTreeEnsemble
from .solver import SolarBoostModel
from .synthgen import GENERATOR_NAME, GENERATOR_VERSION, GenSpec

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"

PathLike = Union[str, Path]


def _write_csv(path: Path, header: list[str], cols: list[np.ndarray], int_cols: int) -> None:
    data = np.column_stack(cols)
    fmt = ["%d"] * int_cols + [FLOAT_FMT] * (data.shape[1] - int_cols)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt=fmt, delimiter=",", newline="\n")


def _read_csv(path: Path, expected_header: Optional[list[str]] = None) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if expected_header is not None and header != expected_header:
            raise ValueError(f"{path.name}: header {header} != expected {expected_header}")
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path.name}: {exc}") from exc
    if data.shape[1] != len(header):
        raise ValueError(f"{path.name}: {data.shape[1]} columns but header has {len(header)}")
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(f"{path.name}: non-finite value at data row {r + 1}, column '{header[c]}'")
    return header, data


def save_dataset(ds: Dataset, out_dir: PathLike, spec: Optional[GenSpec] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T, K, D = ds.features.shape
    t_idx = np.repeat(np.arange(T), K)
    i_idx = np.tile(np.arange(K), T)
    _write_csv(out / "features.csv", ["t", "i"] + [f"d{d}" for d in range(D)],
               [t_idx, i_idx, ds.features.rows()], 2)
    _write_csv(out / "outputs.csv", ["t", "Y", "C_total"], [np.arange(T), ds.Y, ds.totals], 1)
    files = ["features.csv", "outputs.csv"]
    if ds.truth_capacities is not None:
        _write_csv(out / "capacities.csv", ["t"] + [f"c{i}" for i in range(K)],
                   [np.arange(T), ds.truth_capacities.values], 1)
        files.append("capacities.csv")
    if ds.truth_unit is not None:
        _write_csv(out / "unit.csv", ["t"] + [f"y{i}" for i in range(K)], [np.arange(T), ds.truth_unit], 1)
        files.append("unit.csv")
    manifest = {
        "format": "solarboost-dataset",
        "format_version": SCHEMA_VERSION,
        "T": T, "K": K, "D": D,
        "files": files,
        "generator": None if spec is None else {
            "rng": GENERATOR_NAME,
            "version": GENERATOR_VERSION,
            "streams": {"inputs": [spec.seed, 0], "capacities": [spec.seed, 1]},
            "spec": spec.to_dict(),
            "seed": spec.seed,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir: PathLike) -> Dataset:
    src = Path(data_dir)
    if not (src / "features.csv").exists() or not (src / "outputs.csv").exists():
        raise FileNotFoundError(f"{src} does not contain features.csv and outputs.csv")
    header, feat = _read_csv(src / "features.csv")
    if header[:2] != ["t", "i"]:
        raise ValueError("features.csv must start with columns t,i")
    D = len(header) - 2
    _, outs = _read_csv(src / "outputs.csv", ["t", "Y", "C_total"])
    T = outs.shape[0]
    if feat.shape[0] % T:
        raise ValueError(f"features.csv has {feat.shape[0]} rows, not a multiple of T={T}")
    K = feat.shape[0] // T
    t_idx = feat[:, 0].astype(np.int64)
    i_idx = feat[:, 1].astype(np.int64)
    bad = np.flatnonzero((t_idx != np.repeat(np.arange(T), K)) | (i_idx != np.tile(np.arange(K), T)))
    if bad.size:
        raise ValueError(f"features.csv row {bad[0] + 1}: expected (t, i) in time-major order")
    bad = np.flatnonzero(outs[:, 0].astype(np.int64) != np.arange(T))
    if bad.size:
        raise ValueError(f"outputs.csv row {bad[0] + 1}: t out of order")
    x = feat[:, 2:].reshape(T, K, D)
    caps = unit = None
    if (src / "capacities.csv").exists():
        _, cv = _read_csv(src / "capacities.csv", ["t"] + [f"c{i}" for i in range(K)])
        if cv.shape[0] != T:
            raise ValueError("capacities.csv length differs from outputs.csv")
        caps = CapacityMatrix(cv[:, 1:], outs[:, 2])
    if (src / "unit.csv").exists():
        _, uv = _read_csv(src / "unit.csv", ["t"] + [f"y{i}" for i in range(K)])
        if uv.shape[0] != T:
            raise ValueError("unit.csv length differs from outputs.csv")
        unit = uv[:, 1:]
    return Dataset(GridFeatureTensor(x), AggregateOutputSeries(outs[:, 1]), outs[:, 2], caps, unit)


def model_to_dict(model) -> dict:
    ens = model.ensemble
    d = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "kind": model.kind if isinstance(model, SolarBoostModel) else model.kind.value,
        "hyper": asdict(model.hyper) if isinstance(model, SolarBoostModel) else None,
        "feature_dim": model.feature_dim,
        "grid_count": model.grid_count,
        "learning_rate": ens.learning_rate,
        "base_score": ens.base_score,
        "trees": [{"nodes": t.to_nodes()} for t in ens.trees],
    }
    if isinstance(model, SolarBoostModel):
        d["training_T"] = model.training_T
        d["capacities"] = {
            "totals": model.capacities.totals.tolist(),
            "rows": model.capacities.values.tolist(),
        }
    else:
        d["per_unit_target"] = model.per_unit_target
    return d


def model_from_dict(d: dict):
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {d.get('schema_version')!r}")
    ens = RegressionTreeEnsemble.from_dict(d)
    if d["kind"] == SolarBoostModel.kind:
        caps = CapacityMatrix(np.array(d["capacities"]["rows"], dtype=float),
                              np.array(d["capacities"]["totals"], dtype=float))
        return SolarBoostModel(ens, caps, HyperParams(**d["hyper"]), int(d["feature_dim"]),
                               int(d["grid_count"]), int(d["training_T"]))
    return BaselineModel(BaselineKind(d["kind"]), ens, int(d["feature_dim"]), int(d["grid_count"]),
                         bool(d.get("per_unit_target", True)))


def save_model(model, path: PathLike) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path: PathLike):
    return model_from_dict(json.loads(Path(path).read_text()))
