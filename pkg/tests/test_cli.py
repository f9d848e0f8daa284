"""Command-line surface: subcommands, exit codes, file formats."""

import csv

import numpy as np
import pytest

from goca.cli import main, run_ablation, run_lambda_grid
from goca.matrixio import read_matrix, write_matrix
from goca.runconfig import RunConfig, dump_config, parse_config

TINY_CONFIG = """
data.num_classes = 2
data.samples_per_class = 20
data.signal_dim = 4
data.distractor_dim = 3
data.num_distractor_modes = 4
proto.steps = 100
proto.restarts = 1
solver.lambda1 = 0.1
solver.tolerance = 1e-06
solver.max_iters = 500
train.epochs = 2
train.batch_size = 10
train.hidden_dim = 6
train.feature_dim = 8
train.num_prototypes = 4
eval.repeats = 3
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestGenData:
    def test_writes_views_and_labels(self, tmp_path, tiny_config):
        out = tmp_path / "data"
        assert main(["gen-data", "--config", tiny_config, "--out", str(out)]) == 0
        view_a = read_matrix(out / "view_a.mat")
        view_b = read_matrix(out / "view_b.mat")
        assert view_a.shape == (40, 7)
        assert view_b.shape == (40, 4)
        labels = (out / "labels.txt").read_text().splitlines()
        assert len(labels) == 40


class TestOptimizePrototypes:
    def test_writes_unit_rows(self, tmp_path, capsys):
        out = tmp_path / "protos.mat"
        code = main([
            "optimize-prototypes", "--n", "4", "--dim", "3", "--steps", "800",
            "--restarts", "2", "--out", str(out), "--report",
        ])
        assert code == 0
        w = read_matrix(out)
        assert w.shape == (4, 3)
        assert np.max(np.abs(np.linalg.norm(w, axis=1) - 1.0)) <= 1e-9
        assert "max_pairwise_cosine" in capsys.readouterr().out


class TestSolve:
    def test_plain_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        cost = rng.uniform(-1, 1, size=(3, 4))
        cost_path = tmp_path / "cost.mat"
        write_matrix(cost_path, cost)
        out = tmp_path / "plan.mat"
        code = main([
            "solve", "--cost", str(cost_path), "--lambda1", "0.1", "--out", str(out),
        ])
        assert code == 0
        plan = read_matrix(out)
        assert np.max(np.abs(plan.sum(axis=1) - 1.0 / 3.0)) <= 1e-8
        assert np.max(np.abs(plan.sum(axis=0) - 0.25)) <= 1e-8

    def test_guided_requires_prior(self, tmp_path):
        cost_path = tmp_path / "cost.mat"
        write_matrix(cost_path, np.zeros((2, 2)))
        code = main([
            "solve", "--cost", str(cost_path), "--guided", "--out", str(tmp_path / "p.mat"),
        ])
        assert code == 1

    def test_guided_solve(self, tmp_path):
        rng = np.random.default_rng(1)
        cost_path = tmp_path / "cost.mat"
        prior_path = tmp_path / "prior.mat"
        write_matrix(cost_path, rng.uniform(-1, 1, size=(3, 3)))
        write_matrix(prior_path, rng.uniform(0.1, 1.0, size=(3, 3)))
        out = tmp_path / "plan.mat"
        code = main([
            "solve", "--cost", str(cost_path), "--guided", "--prior", str(prior_path),
            "--lambda1", "0.1", "--lambda2", "0.05", "--out", str(out),
        ])
        assert code == 0
        assert read_matrix(out).shape == (3, 3)

    def test_strict_non_convergence_exits_2(self, tmp_path):
        rng = np.random.default_rng(2)
        cost_path = tmp_path / "cost.mat"
        write_matrix(cost_path, rng.uniform(-1, 1, size=(3, 3)))
        code = main([
            "solve", "--cost", str(cost_path), "--lambda1", "0.02",
            "--tolerance", "1e-18", "--max-iters", "5",
            "--strict", "--out", str(tmp_path / "p.mat"),
        ])
        assert code == 2


class TestTrainAndEval:
    def test_train_writes_artifacts(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        code = main([
            "train", "--mode", "sep", "--config", tiny_config, "--out", str(out),
        ])
        assert code == 0
        trace = _read_csv(out / "loss_trace.csv")
        assert trace[0] == ["step", "loss"]
        assert len(trace) == 1 + 2 * 4  # 2 epochs x 4 full batches
        assert read_matrix(out / "prototypes.mat").shape == (4, 8)
        assert (out / "enc_a_w1.mat").exists()
        assert (out / "enc_shared_w2.mat").exists()
        metrics = _read_csv(out / "metrics.csv")
        assert metrics[0][0] == "condition"
        assert {row[0] for row in metrics[1:]} == {"a", "b", "fused"}

    def test_eval_subcommand(self, tmp_path, tiny_config):
        data_dir = tmp_path / "data"
        main(["gen-data", "--config", tiny_config, "--out", str(data_dir)])
        metrics_path = tmp_path / "metrics.csv"
        code = main([
            "eval", "--features", str(data_dir / "view_b.mat"),
            "--labels", str(data_dir / "labels.txt"),
            "--queries", str(data_dir / "view_b.mat"),
            "--query-labels", str(data_dir / "labels.txt"),
            "--recall-k", "1", "--repeats", "3",
            "--metrics", str(metrics_path),
        ])
        assert code == 0
        rows = _read_csv(metrics_path)
        names = [row[0] for row in rows[1:]]
        assert names == ["accuracy", "nmi", "f1", "recall@1"]
        # every query is its own nearest neighbor
        assert float(rows[4][1]) == 1.0

    def test_eval_rejects_misaligned_labels(self, tmp_path, tiny_config):
        data_dir = tmp_path / "data"
        main(["gen-data", "--config", tiny_config, "--out", str(data_dir)])
        bad_labels = tmp_path / "bad.txt"
        bad_labels.write_text("0\n1\n")
        code = main([
            "eval", "--features", str(data_dir / "view_b.mat"),
            "--labels", str(bad_labels), "--metrics", str(tmp_path / "m.csv"),
        ])
        assert code == 1


class TestGridAndAblate:
    def test_lambda_grid_rows(self, tmp_path, tiny_config):
        out = tmp_path / "grid.csv"
        code = main([
            "lambda-grid", "--config", tiny_config,
            "--lambda1-list", "0.1,0.2", "--lambda2-list", "0.0,0.03",
            "--out", str(out),
        ])
        assert code == 0
        rows = _read_csv(out)
        assert rows[0] == ["lambda1", "lambda2", "accuracy"]
        assert len(rows) == 5
        for row in rows[1:]:
            assert 0.0 <= float(row[2]) <= 1.0

    def test_zero_lambda2_cell_equals_sep_ablation_cell(self, tiny_config):
        cfg = parse_config(TINY_CONFIG)
        grid = run_lambda_grid(cfg, [cfg.solver.lambda1], [0.0], seeds=1)
        ablation = run_ablation(cfg, seeds=1)
        sep_fused = next(
            r["accuracy"] for r in ablation if r["mode"] == "sep" and r["condition"] == "fused"
        )
        assert grid[0]["accuracy"] == sep_fused

    def test_ablate_writes_all_modes(self, tmp_path, tiny_config):
        out = tmp_path / "ablation.csv"
        code = main(["ablate", "--config", tiny_config, "--seeds", "1", "--out", str(out)])
        assert code == 0
        rows = _read_csv(out)
        modes = {row[1] for row in rows[1:]}
        assert modes == {"sview", "avg", "sep", "goca"}
        conditions = {(row[1], row[2]) for row in rows[1:]}
        assert ("avg", "fused") in conditions
        assert ("goca", "a") in conditions

    def test_parallel_jobs_match_serial(self):
        cfg = parse_config(TINY_CONFIG)
        serial = run_ablation(cfg, seeds=2, jobs=1)
        parallel = run_ablation(cfg, seeds=2, jobs=2)
        assert serial == parallel

    def test_single_cell_grid_equals_single_train_run(self):
        from goca.cli import _train_and_eval

        cfg = parse_config(TINY_CONFIG)
        grid = run_lambda_grid(cfg, [cfg.solver.lambda1], [cfg.solver.lambda2], seeds=1)
        rows = _train_and_eval(cfg, "goca", 0)
        fused = next(r["accuracy"] for r in rows if r["condition"] == "fused")
        assert grid[0]["accuracy"] == fused


class TestVerifyAndConfig:
    def test_verify_passes(self, capsys):
        assert main(["verify", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_verify_failure_exits_3(self, monkeypatch, capsys):
        import goca.cli as cli_mod

        monkeypatch.setattr(
            cli_mod,
            "_verification_battery",
            lambda seed: [("doomed property", False, "worst 1e+00 vs tol 1e-09")],
        )
        assert main(["verify"]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_dump_config_round_trip(self, capsys):
        assert main(["dump-config"]) == 0
        text = capsys.readouterr().out
        assert text == dump_config(RunConfig())

    def test_unknown_subcommand_exits_1(self):
        assert main(["frobnicate"]) == 1

    def test_config_error_exits_1(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.bogus = 1\n")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
