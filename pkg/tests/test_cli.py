import csv
import json

import numpy as np
import pytest

from vindy import config as C
from vindy.cli import main
from vindy.io import load_checkpoint, load_dataset, load_forecast, save_forecast
from vindy.vici import EnsembleForecast, credibility_bands

SMALL = {"preset": "rossler", "dataset": {"n_trajectories": 3, "n_steps": 300}, "model": {"epochs": 4},
         "forecast": {"m": 6, "n_steps": 300}}


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "small.json", SMALL)
    assert main(["generate", "--config", cfg, "--out", str(root / "ds"), "--quiet", "--seed", "7"]) == 0
    assert main(["train", "--config", cfg, "--dataset", str(root / "ds"), "--out", str(root / "ck"),
                 "--quiet"]) == 0
    return root, cfg


class TestPipeline:
    def test_generate(self, pipeline):
        root, _ = pipeline
        data = load_dataset(root / "ds")
        assert data.X.shape == (900, 3)
        assert data.meta["root_seed"] == 7

    def test_train_outputs(self, pipeline):
        root, _ = pipeline
        for f in ("model.json", "weights.bin", "history.csv", "posterior.csv"):
            assert (root / "ck" / f).exists()
        with open(root / "ck" / "posterior.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 30

    def test_train_repeatable(self, pipeline, tmp_path):
        root, cfg = pipeline
        assert main(["train", "--config", cfg, "--dataset", str(root / "ds"), "--out", str(tmp_path), "--quiet"]) == 0
        assert (tmp_path / "history.csv").read_bytes() == (root / "ck" / "history.csv").read_bytes()

    def test_resume(self, pipeline, tmp_path):
        root, cfg = pipeline
        assert main(["train", "--config", cfg, "--dataset", str(root / "ds"), "--resume", str(root / "ck"),
                     "--out", str(tmp_path), "--quiet"]) == 0
        with open(tmp_path / "history.csv") as fh:
            epochs = sorted({int(r["epoch"]) for r in csv.DictReader(fh)})
        assert epochs == list(range(1, 9))

    def test_prune_huge_tau_changes_nothing(self, pipeline, tmp_path):
        root, cfg = pipeline
        assert main(["prune", "--config", cfg, "--checkpoint", str(root / "ck"), "--tau", "1e9",
                     "--out", str(tmp_path), "--quiet"]) == 0
        np.testing.assert_array_equal(load_checkpoint(tmp_path).vindy.mask, load_checkpoint(root / "ck").vindy.mask)
        assert (tmp_path / "pruning_report.csv").exists()

    def test_prune_rejects_bad_tau(self, pipeline, tmp_path):
        root, cfg = pipeline
        assert main(["prune", "--config", cfg, "--checkpoint", str(root / "ck"), "--tau", "0",
                     "--out", str(tmp_path), "--quiet"]) == 2

    def test_forecast_and_eval(self, pipeline, tmp_path):
        root, cfg = pipeline
        assert main(["forecast", "--config", cfg, "--checkpoint", str(root / "ck"), "--dataset", str(root / "ds"),
                     "--out", str(tmp_path / "fc"), "--quiet", "--seed", "3"]) == 0
        doc, arr = load_forecast(tmp_path / "fc")
        assert arr["members"].shape[1:] == (300, 3)
        assert arr["members"].shape[0] + len(doc["failed"]) == 6
        assert doc["meta"]["root_seed"] == 3
        assert main(["eval", "--config", cfg, "--forecast", str(tmp_path / "fc"), "--reference", str(root / "ds"),
                     "--quiet"]) == 0
        metrics = json.loads((tmp_path / "fc" / "metrics.json").read_text())
        assert np.isfinite(metrics["mean_relative_error"])
        assert set(metrics["coverage"]) == {"q0.5", "q0.9", "std1", "std2"}

    def test_eval_identical_forecast(self, pipeline, tmp_path):
        root, cfg = pipeline
        tr = load_dataset(root / "ds").trajectory(0)
        members = np.stack([tr.X, tr.X])
        fc = EnsembleForecast(tr.times, members[:, :, :1], members, tr.X.copy(), np.zeros_like(tr.X))
        save_forecast(fc, credibility_bands(fc), tmp_path)
        assert main(["eval", "--config", cfg, "--forecast", str(tmp_path), "--reference", str(root / "ds"),
                     "--quiet"]) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert metrics["mean_relative_error"] == 0.0
        assert all(v == 1.0 for v in metrics["coverage"].values())

    def test_eval_grid_mismatch(self, pipeline, tmp_path):
        root, cfg = pipeline
        short = write_config(tmp_path / "short.json", {**SMALL, "forecast": {"m": 3, "n_steps": 100}})
        assert main(["forecast", "--config", short, "--checkpoint", str(root / "ck"), "--dataset", str(root / "ds"),
                     "--out", str(tmp_path / "fc"), "--quiet"]) == 0
        assert main(["eval", "--config", short, "--forecast", str(tmp_path / "fc"), "--reference", str(root / "ds"),
                     "--quiet"]) == 2

    def test_insufficient_ensemble_for_bands_is_still_written(self, pipeline, tmp_path):
        root, cfg = pipeline
        assert main(["forecast", "--config", cfg, "--checkpoint", str(root / "ck"), "--dataset", str(root / "ds"),
                     "-m", "1", "--out", str(tmp_path), "--quiet"]) == 0
        assert load_forecast(tmp_path)[0]["bands"] == {}


class TestErrors:
    def test_malformed_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "ds"), "--quiet"]) == 2
        assert not (tmp_path / "ds").exists()

    def test_schema_violation(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"preset": "rossler", "model": {"lambdas": [1, 2]}})
        assert main(["generate", "--config", cfg, "--out", str(tmp_path / "ds"), "--quiet"]) == 2
        assert not (tmp_path / "ds").exists()

    def test_missing_checkpoint(self, tmp_path):
        assert main(["forecast", "--config", "rossler", "--checkpoint", str(tmp_path / "none"),
                     "--out", str(tmp_path / "fc"), "--quiet"]) == 3

    def test_zero_trajectories(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"preset": "rossler", "dataset": {"n_trajectories": 0}})
        assert main(["generate", "--config", cfg, "--out", str(tmp_path / "ds"), "--quiet"]) == 0
        assert load_dataset(tmp_path / "ds").X.shape == (0, 3)

    def test_training_on_empty_dataset(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"preset": "rossler", "dataset": {"n_trajectories": 0}})
        main(["generate", "--config", cfg, "--out", str(tmp_path / "ds"), "--quiet"])
        assert main(["train", "--config", cfg, "--dataset", str(tmp_path / "ds"), "--out", str(tmp_path / "ck"),
                     "--quiet"]) == 2

    def test_no_output_directory(self):
        assert main(["generate", "--config", "rossler", "--quiet"]) == 2


class TestConfig:
    def test_rossler_preset(self):
        cfg = C.load("rossler")
        assert cfg["dataset"]["n_trajectories"] == 30 and cfg["dataset"]["n_steps"] == 2000
        assert cfg["model"]["lambdas"] == [0.0, 0.0, 1.0, 1e-3, 0.0]
        assert cfg["thresholding"]["tau"] == 5.0 and cfg["forecast"]["m"] == 100
        system, ic = C.system_and_ic(cfg)
        assert system.state_dim == 3
        tcfg = C.training_config(cfg)
        assert not tcfg.autoencoder

    def test_reaction_diffusion_betas(self):
        cfg = C.load("reaction-diffusion")
        b = np.array(cfg["dataset"]["betas"])[:, 0]
        assert len(b) == 16 and np.all(np.diff(b) > 0)
        assert np.all(np.isin(np.round(b, 12), np.round(np.linspace(0.7, 1.1, 20), 12)))

    def test_duffing_preset(self):
        cfg = C.load("duffing-beam")
        assert len(cfg["dataset"]["betas"]) == cfg["dataset"]["n_trajectories"]
        assert C.training_config(cfg).second_order

    def test_seed_override(self):
        assert C.load("rossler", seed=11)["seed"] == 11

    def test_override_merges(self, tmp_path):
        cfg = C.load(write_config(tmp_path / "c.json", SMALL))
        assert cfg["dataset"]["n_trajectories"] == 3
        assert cfg["dataset"]["ic"]["std"] == 2.25

    @pytest.mark.parametrize("doc", [{"seed": -1, "preset": "rossler"}, {"preset": "lorenz"},
                                     {"preset": "rossler", "unknown": 1},
                                     {"preset": "rossler", "model": {"learning_rate": 0}},
                                     {"dataset": {"n_trajectories": 1}}])
    def test_invalid(self, doc):
        with pytest.raises(C.ConfigError):
            C.resolve(doc)

    def test_beta_count_checked(self):
        cfg = C.resolve({"preset": "rossler", "dataset": {"betas": [[1.0]]}})
        with pytest.raises(C.ConfigError):
            C.betas(cfg)
