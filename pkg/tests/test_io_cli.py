import csv
import json

import numpy as np
import pytest

from solarboost import io, solver
from solarboost.baselines import predict_baseline, train_baseline
from solarboost.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main, read_config
from solarboost.core import Dataset, HyperParams
from solarboost.synthgen import GenSpec, generate

MICRO = ["--T-blocks", "2", "--repeat", "2", "--K", "2", "--D", "3"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--T-blocks", "6", "--repeat", "8", "--K", "3", "--seed", "1", "--out", str(d)]) == 0
    return d


class TestDatasetFiles:
    def test_roundtrip_exact(self, tmp_path):
        ds = generate(GenSpec(T_blocks=3, repeat=5, K=3, process="kalman", seed=4))
        io.save_dataset(ds, tmp_path)
        back = io.load_dataset(tmp_path)
        for a, b in [(ds.features.values, back.features.values), (ds.Y, back.Y), (ds.totals, back.totals),
                     (ds.truth_capacities.values, back.truth_capacities.values), (ds.truth_unit, back.truth_unit)]:
            assert a.tobytes() == b.tobytes()

    def test_real_shaped_data(self, tmp_path):
        ds = generate(GenSpec(T_blocks=2, repeat=3, K=2))
        bare = Dataset(ds.features, ds.outputs, ds.totals)
        io.save_dataset(bare, tmp_path)
        assert not (tmp_path / "capacities.csv").exists()
        assert io.load_dataset(tmp_path).truth_capacities is None

    def test_headers(self, tmp_path):
        io.save_dataset(generate(GenSpec(T_blocks=1, repeat=2, K=2, D=3)), tmp_path)
        first = lambda n: (tmp_path / n).read_text().splitlines()[0]
        assert first("features.csv") == "t,i,d0,d1,d2"
        assert first("outputs.csv") == "t,Y,C_total"
        assert first("capacities.csv") == "t,c0,c1"
        assert "\r" not in (tmp_path / "features.csv").read_text()

    def test_nonfinite_diagnostic(self, tmp_path):
        io.save_dataset(generate(GenSpec(T_blocks=1, repeat=3, K=2)), tmp_path)
        lines = (tmp_path / "outputs.csv").read_text().splitlines()
        parts = lines[2].split(",")
        parts[1] = "nan"
        lines[2] = ",".join(parts)
        (tmp_path / "outputs.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="row 2, column 'Y'"):
            io.load_dataset(tmp_path)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            io.load_dataset(tmp_path / "none")


class TestModelFiles:
    def test_solarboost_roundtrip(self, tmp_path):
        ds = generate(GenSpec(T_blocks=6, repeat=8, K=3, seed=2))
        m = solver.train(ds, HyperParams(n_rounds=15, learning_rate=0.2, block_len=8))
        io.save_model(m, tmp_path / "m.json")
        back = io.load_model(tmp_path / "m.json")
        probe = np.random.default_rng(0).random((20, 3, 3))
        assert solver.predict(back, probe).tobytes() == solver.predict(m, probe).tobytes()
        assert solver.predict(back, probe, np.ones(20)).tobytes() == solver.predict(m, probe, np.ones(20)).tobytes()
        assert back.capacities.values.tobytes() == m.capacities.values.tobytes()
        d = json.loads((tmp_path / "m.json").read_text())
        assert {"schema_version", "kind", "hyper", "feature_dim", "grid_count", "learning_rate", "trees",
                "capacities"} <= set(d)

    @pytest.mark.parametrize("kind", ["average_grid", "flatten_grid", "ideal_fit"])
    def test_baseline_roundtrip(self, tmp_path, kind):
        ds = generate(GenSpec(T_blocks=4, repeat=6, K=2, seed=3))
        m = train_baseline(kind, ds, HyperParams(n_rounds=10, learning_rate=0.3))
        io.save_model(m, tmp_path / "b.json")
        back = io.load_model(tmp_path / "b.json")
        args = dict(totals=ds.totals, capacities=ds.truth_capacities.values)
        assert predict_baseline(back, ds.features, **args).tobytes() == predict_baseline(m, ds.features, **args).tobytes()

    def test_schema_version_checked(self):
        with pytest.raises(ValueError):
            io.model_from_dict({"schema_version": 99})


class TestCli:
    def test_synth_defaults_rows(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path)]) == EXIT_OK
        assert len((tmp_path / "outputs.csv").read_text().splitlines()) == 28801

    def test_synth_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--process", "ar1", "--seed", "7", *MICRO, "--out", str(tmp_path / name)]) == 0
        for f in ("features.csv", "outputs.csv", "capacities.csv", "unit.csv", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_synth_micro(self, tmp_path):
        main(["synth", *MICRO, "--out", str(tmp_path)])
        assert len(read_rows(tmp_path / "outputs.csv")) == 4
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["generator"]["rng"] == "numpy.random.PCG64" and man["generator"]["seed"] == 0

    def test_synth_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", *MICRO, "--out", str(blocker / "sub")]) == EXIT_IO

    def test_synth_invalid(self, tmp_path):
        assert main(["synth", "--K", "0", "--out", str(tmp_path)]) == EXIT_INVALID

    def test_train_solarboost(self, data_dir, tmp_path):
        rc = main(["train", "--data", str(data_dir), "--rounds", "5", "--block-len", "8", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        assert json.loads((tmp_path / "model.json").read_text())["kind"] == "solarboost"
        log = read_rows(tmp_path / "train_log.csv")
        assert list(log[0]) == ["round", "true_objective", "train_rmse"] and len(log) == 6

    @pytest.mark.parametrize("method", ["average_grid", "flatten_grid", "ideal_fit"])
    def test_train_baselines(self, data_dir, tmp_path, method):
        assert main(["train", "--data", str(data_dir), "--method", method, "--rounds", "3", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "model.json").read_text())["kind"] == method

    def test_train_zero_rounds(self, data_dir, tmp_path):
        main(["train", "--data", str(data_dir), "--rounds", "0", "--out", str(tmp_path)])
        assert json.loads((tmp_path / "model.json").read_text())["trees"] == []

    def test_train_bad_data_row_diagnostic(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad"
        bad.mkdir()
        for f in data_dir.iterdir():
            (bad / f.name).write_bytes(f.read_bytes())
        lines = (bad / "features.csv").read_text().splitlines()
        lines[5] = lines[5].rsplit(",", 1)[0] + ",inf"
        (bad / "features.csv").write_text("\n".join(lines) + "\n")
        assert main(["train", "--data", str(bad), "--rounds", "1", "--out", str(tmp_path / "m")]) == EXIT_INVALID
        assert "row 5, column 'd2'" in capsys.readouterr().err

    def test_config_file_and_override(self, data_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# training run\ndata = {data_dir}\nrounds=4\nblock_len=8  # one block per day\n")
        assert main(["train", "--config", str(cfg), "--rounds", "2", "--out", str(tmp_path / "m")]) == 0
        assert len(json.loads((tmp_path / "m" / "model.json").read_text())["trees"]) == 2

    def test_config_unknown_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("rounds=3\ncolour=blue\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INVALID

    def test_config_missing_required(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == EXIT_INVALID

    def test_read_config(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("a = 1\n\n# x\nb-c=two # trailing\n")
        assert read_config(p) == {"a": "1", "b_c": "two"}

    def test_eval_metrics(self, data_dir, tmp_path):
        main(["train", "--data", str(data_dir), "--rounds", "5", "--block-len", "8", "--train-len", "40",
              "--out", str(tmp_path / "m")])
        assert main(["eval", "--model", str(tmp_path / "m" / "model.json"), "--data", str(data_dir),
                     "--start", "40", "--out", str(tmp_path / "e")]) == 0
        names = [r["metric"] for r in read_rows(tmp_path / "e" / "metrics.csv")]
        assert names[0] == "aggregate_rmse"
        assert {"capacity_rmse", "unit_rmse", "unit_max", "unit_min", "unit_mean"} <= set(names)

    def test_eval_perfect_model(self, tmp_path):
        # a single-grid step function learnt exactly by one full-rate tree
        ds = generate(GenSpec(T_blocks=2, repeat=4, K=1, D=3, sigma=0.0, seed=5))
        x = ds.features.values[:, 0, 0]
        y = np.where(x <= np.median(x), 1.0, 2.0) * ds.totals
        perfect = Dataset(ds.features, y, ds.totals)
        io.save_dataset(perfect, tmp_path / "d")
        m = solver.train(perfect, HyperParams(n_rounds=1, learning_rate=1.0, tree_reg=0.0, max_depth=1,
                                              block_len=4))
        io.save_model(m, tmp_path / "m.json")
        assert main(["eval", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "d"),
                     "--out", str(tmp_path / "e")]) == 0
        rows = read_rows(tmp_path / "e" / "metrics.csv")
        assert [r["metric"] for r in rows] == ["aggregate_rmse"]
        assert float(rows[0]["value"]) == 0.0

    def test_eval_layout_mismatch(self, data_dir, tmp_path):
        main(["train", "--data", str(data_dir), "--rounds", "1", "--block-len", "8", "--out", str(tmp_path / "m")])
        main(["synth", *MICRO, "--out", str(tmp_path / "other")])
        assert main(["eval", "--model", str(tmp_path / "m" / "model.json"), "--data", str(tmp_path / "other"),
                     "--out", str(tmp_path / "e")]) == EXIT_INVALID

    def test_eval_two_methods(self, data_dir, tmp_path):
        for method in ("solarboost", "average_grid"):
            main(["train", "--data", str(data_dir), "--method", method, "--rounds", "3", "--block-len", "8",
                  "--train-len", "40", "--out", str(tmp_path / method)])
            main(["eval", "--model", str(tmp_path / method / "model.json"), "--data", str(data_dir),
                  "--start", "40", "--out", str(tmp_path / method / "eval")])
        a = read_rows(tmp_path / "solarboost" / "eval" / "metrics.csv")
        b = read_rows(tmp_path / "average_grid" / "eval" / "metrics.csv")
        assert [r["metric"] for r in a] == [r["metric"] for r in b]

    def test_predict(self, data_dir, tmp_path):
        main(["train", "--data", str(data_dir), "--rounds", "3", "--block-len", "8", "--out", str(tmp_path / "m")])
        assert main(["predict", "--model", str(tmp_path / "m" / "model.json"), "--data", str(data_dir),
                     "--start", "40", "--out", str(tmp_path / "p")]) == 0
        rows = read_rows(tmp_path / "p" / "predictions.csv")
        assert len(rows) == 8 and rows[0]["t"] == "40"

    def test_sweep_lambda_rows(self, data_dir, tmp_path):
        assert main(["sweep", "--param", "lambda", "--values", "10,100,1000", "--data", str(data_dir),
                     "--train-len", "40", "--rounds", "3", "--block-len", "8", "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "sweep_lambda.csv")
        assert len(rows) == 3 and "seed" in rows[0]

    def test_sweep_k_rows(self, data_dir, tmp_path):
        main(["sweep", "--param", "grid_count", "--values", "1,3", "--data", str(data_dir),
              "--train-len", "40", "--rounds", "3", "--block-len", "8", "--out", str(tmp_path)])
        assert [r["grid_count"] for r in read_rows(tmp_path / "sweep_grid_count.csv")] == ["1", "3"]

    def test_thm_bound(self, capsys):
        args = ["thm", "bound", "--bound-K", "1", "--sigma-c", "1", "--M", "1", "--r", "1", "--C-t", "1",
                "--sigma-f", "1"]
        assert main(args + ["--epsilon", "1"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(1 / 3)
        assert main(args + ["--epsilon", "0"]) == 0
        assert capsys.readouterr().out.strip() == "undefined"

    def test_thm_variance(self, tmp_path):
        assert main(["thm", "variance", "--T-blocks", "4", "--repeat", "4", "--K", "3", "--noise-levels", "0,0.1",
                     "--spreads", "0.1,1", "--seeds", "0,1", "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "thm_variance.csv")
        assert len(rows) == 4 and rows[0]["seeds"] == "0 1"

    def test_thm_drift(self, tmp_path):
        assert main(["thm", "drift", "--T-blocks", "6", "--repeat", "6", "--K", "3", "--sigmas", "0,0.05",
                     "--seeds", "0", "--test-blocks", "2", "--rounds", "5", "--block-len", "6",
                     "--out", str(tmp_path)]) == 0
        assert len(read_rows(tmp_path / "thm_drift.csv")) == 2

    def test_unknown_subcommand(self):
        assert main(["fly"]) == EXIT_INVALID
