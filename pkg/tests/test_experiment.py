import csv
import math
from pathlib import Path

import pytest

from privmf.cli import main
from privmf.data import format_ratings, synthetic_dataset
from privmf.experiment import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiments,
)
from privmf.randresp import calibrate


@pytest.fixture()
def ratings_file(tmp_path):
    ds = synthetic_dataset(30, 40, seed=21, mean_ratings_per_user=8)
    path = tmp_path / "ratings.tsv"
    path.write_text(format_ratings(ds), encoding="utf-8")
    return path


def write_config(tmp_path, ratings_file, **overrides):
    lines = {
        "dataset": str(ratings_file),
        "task": "numerical",
        "k": "3",
        "eta0": "0.1",
        "gamma": "0.6",
        "seed": "5",
        "noise": "false",
        "eps_i": "1",
        "eps_g": "1",
        "iterations": "3",
        "repetitions": "2",
        "baseline_nonprivate": "true",
        "baseline_isgld": "",
        "output": str(tmp_path / "out"),
    }
    lines.update(overrides)
    text = "# experiment settings\n" + "\n".join(f"{k} = {v}" for k, v in lines.items()) + "\n"
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(text, encoding="utf-8")
    return cfg


class TestConfig:
    def test_parse_types_and_comments(self, tmp_path, ratings_file):
        cfg = write_config(tmp_path, ratings_file, eps_i="4, 1, 0.25", eps_g="inf,4")
        config = load_config(cfg)
        assert config.k == 3
        assert config.eps_i == [4.0, 1.0, 0.25]
        assert math.isinf(config.eps_g[0]) and config.eps_g[1] == 4.0
        assert config.noise is False
        assert config.repetitions == 2

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(cfg)

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("just some words\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            load_config(cfg)

    def test_task_defaults(self):
        numerical = ExperimentConfig(dataset="x")
        assert numerical.k == 50 and numerical.split_mode == "random-holdout"
        one_class = ExperimentConfig(dataset="x", task="one-class")
        assert one_class.k == 10 and one_class.split_mode == "leave-one-out"

    def test_init_prediction_mean_token(self, tmp_path, ratings_file):
        cfg = write_config(tmp_path, ratings_file, init_prediction="mean")
        assert load_config(cfg).init_prediction == "mean"


class TestRunExperiments:
    def test_csv_layout_and_determinism(self, tmp_path, ratings_file):
        cfg = write_config(tmp_path, ratings_file)
        config = load_config(cfg)
        paths = run_experiments(config)
        text = Path(paths["curves"]).read_text(encoding="utf-8")
        with open(paths["curves"], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == CSV_HEADER
        # 2 reps x (nonprivate + one budget cell) x 3 rounds
        assert len(rows) - 1 == 2 * 2 * 3
        variants = {r[3] for r in rows[1:]}
        assert variants == {"nonprivate", "private"}

        paths2 = run_experiments(config)
        assert Path(paths2["curves"]).read_text(encoding="utf-8") == text
        assert Path(paths["summary"]).exists()

    def test_alpha_inf_variant_recorded_as_zero_budget(self, tmp_path, ratings_file):
        cfg = write_config(tmp_path, ratings_file, eps_g="inf", baseline_nonprivate="false")
        paths = run_experiments(load_config(cfg))
        with open(paths["curves"], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        assert {r[3] for r in rows} == {"private_alpha_inf"}
        assert {r[2] for r in rows} == {"0"}

    def test_one_class_runs_auc(self, tmp_path, ratings_file):
        cfg = write_config(
            tmp_path, ratings_file, task="one-class", k="2", eps_i="4", iterations="2", repetitions="1"
        )
        paths = run_experiments(load_config(cfg))
        with open(paths["curves"], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        assert {r[5] for r in rows} == {"auc"}
        assert {r[3] for r in rows} == {"nonprivate", "private"}

    def test_full_budget_grid_yields_16_cells(self, tmp_path, ratings_file):
        cfg = write_config(
            tmp_path,
            ratings_file,
            eps_i="4,1,0.25,0.0625",
            eps_g="4,1,0.25,0.0625",
            iterations="1",
            repetitions="1",
            baseline_nonprivate="false",
        )
        paths = run_experiments(load_config(cfg))
        with open(paths["curves"], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        cells = {(r[1], r[2]) for r in rows}
        assert len(cells) == 16

    def test_isgld_baseline_rows(self, tmp_path, ratings_file):
        cfg = write_config(tmp_path, ratings_file, baseline_isgld="4,2", baseline_nonprivate="false", eps_i="", eps_g="")
        paths = run_experiments(load_config(cfg))
        with open(paths["curves"], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        assert {r[3] for r in rows} == {"isgld_eps4", "isgld_eps2"}


class TestCli:
    def test_calibrate_prints_params(self, capsys):
        rc = main(["calibrate", "--eps-i", "4", "--h", "20", "--items", "1682", "--z", "106.04"])
        assert rc == 0
        out = capsys.readouterr().out
        expected = calibrate(4.0, 20, 1682, 106.04)
        assert f"{expected.p_star:.12g}" in out
        assert f"{expected.q:.12g}" in out

    def test_calibrate_infeasible_is_error(self, capsys):
        rc = main(["calibrate", "--eps-i", "4", "--h", "100", "--items", "100", "--z", "200"])
        assert rc == 1
        assert "violates" in capsys.readouterr().err

    def test_run_and_attack(self, tmp_path, ratings_file, capsys):
        cfg = write_config(tmp_path, ratings_file, iterations="2", repetitions="1")
        assert main(["run", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "curves:" in out
        cfg2 = write_config(tmp_path, ratings_file, iterations="50")
        assert main(["attack", "--config", str(cfg2)]) == 0
        out = capsys.readouterr().out
        assert "accuracy vs B" in out
