"""End-to-end command-line behavior, exit codes, and output files."""

import json
import os

import numpy as np
import pytest

from qocnn import cli, layers, training


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def train_args(files, out_dir, extra=()):
    return [
        "train",
        "--train-images", str(files["train_images"]),
        "--train-labels", str(files["train_labels"]),
        "--test-images", str(files["test_images"]),
        "--test-labels", str(files["test_labels"]),
        "--out-dir", str(out_dir),
        *extra,
    ]


@pytest.fixture(scope="module")
def trained_run(synth_idx_files, tmp_path_factory):
    """One qonn training run shared by the evaluate/export tests."""
    out_dir = tmp_path_factory.mktemp("run")
    code = cli.main(
        train_args(
            synth_idx_files,
            out_dir,
            extra=["--arch", "qonn", "--epochs", "2", "--seed", "3"],
        )
    )
    assert code == 0
    return out_dir


class TestEstimate:
    def test_headline_numbers(self, capsys):
        code, out, _ = run(
            ["estimate", "--layers", "10", "--n", "10000", "--batch", "200"], capsys
        )
        assert code == 0
        assert "classical_ops = 200000000000" in out
        assert "quantum_ops = 1020000000" in out
        assert "classical_params = 1000000000" in out
        assert "qubit_estimate = 220" in out
        assert "input_qubits_mnist = 392" in out
        speedup = float(out.split("speedup = ")[1].splitlines()[0])
        assert 190 <= speedup <= 200

    def test_trivial_case(self, capsys):
        code, out, _ = run(
            ["estimate", "--layers", "1", "--n", "1", "--batch", "1"], capsys
        )
        assert code == 0
        assert "classical_ops = 1" in out
        assert "quantum_ops = 2" in out

    def test_nonpositive_rejected(self, capsys):
        code, _, err = run(
            ["estimate", "--layers", "0", "--n", "5", "--batch", "5"], capsys
        )
        assert code == 2
        assert "L" in err

    def test_missing_parameter_rejected(self, capsys):
        code, _, err = run(["estimate", "--layers", "3"], capsys)
        assert code == 2
        assert "--n" in err

    def test_sweep_file(self, tmp_path, capsys):
        sweep = tmp_path / "sweep_in.csv"
        sweep.write_text("L,n,b\n1,1,1\n10,10000,200\n2,3,4\n")
        code, out, _ = run(
            ["estimate", "--sweep", str(sweep), "--out-dir", str(tmp_path)], capsys
        )
        assert code == 0
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        assert "wrote 3 rows" in out

    def test_sweep_missing_columns(self, tmp_path, capsys):
        sweep = tmp_path / "bad.csv"
        sweep.write_text("L,n\n1,1\n")
        code, _, err = run(["estimate", "--sweep", str(sweep)], capsys)
        assert code == 2
        assert "b" in err


class TestTrain:
    def test_missing_file_exits_2(self, synth_idx_files, tmp_path, capsys):
        args = train_args(synth_idx_files, tmp_path)
        args[2] = str(tmp_path / "nope-images")
        code, _, err = run(args, capsys)
        assert code == 2
        assert "nope-images" in err

    def test_missing_flag_exits_2(self, tmp_path, capsys):
        code, _, err = run(["train", "--out-dir", str(tmp_path)], capsys)
        assert code == 2
        assert "--train-images" in err

    def test_writes_outputs_and_echoes_lambda(
        self, synth_idx_files, tmp_path, capsys
    ):
        code, out, _ = run(
            train_args(
                synth_idx_files, tmp_path, extra=["--epochs", "1", "--seed", "0"]
            ),
            capsys,
        )
        assert code == 0
        assert (tmp_path / "model.ckpt").exists()
        assert (tmp_path / "history.csv").exists()
        run_log = (tmp_path / "run.log").read_text()
        assert "lam = 0.2" in run_log  # default echoed
        assert "arch = qonn" in run_log
        assert "final test accuracy" in out

    def test_deterministic_given_seed(self, synth_idx_files, tmp_path, capsys):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        extra = ["--epochs", "2", "--seed", "9", "--arch", "qonn"]
        assert cli.main(train_args(synth_idx_files, d1, extra)) == 0
        assert cli.main(train_args(synth_idx_files, d2, extra)) == 0
        capsys.readouterr()
        assert (d1 / "history.csv").read_bytes() == (d2 / "history.csv").read_bytes()
        assert (d1 / "model.ckpt").read_bytes() == (d2 / "model.ckpt").read_bytes()

    def test_divergence_exits_3(self, synth_idx_files, tmp_path, capsys):
        code, _, err = run(
            train_args(
                synth_idx_files,
                tmp_path,
                extra=["--lr", "1e6", "--optimizer", "sgd", "--epochs", "1"],
            ),
            capsys,
        )
        assert code == 3
        assert "diverged" in err

    def test_config_file_precedence(self, synth_idx_files, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment line\n"
            "epochs = 1\n"
            "lambda = 0.3\n"
            "seed = 4\n"
            "batch-size = 32\n"
        )
        code, _, _ = run(
            train_args(
                synth_idx_files,
                tmp_path,
                extra=["--config", str(cfg), "--seed", "7"],
            ),
            capsys,
        )
        assert code == 0
        log = (tmp_path / "run.log").read_text()
        assert "epochs = 1" in log  # config beats default
        assert "lam = 0.3" in log  # lambda alias accepted
        assert "batch_size = 32" in log
        assert "seed = 7" in log  # flag beats config

    def test_unknown_config_key_exits_2(self, synth_idx_files, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("momentum = 0.9\n")
        code, _, err = run(
            train_args(synth_idx_files, tmp_path, extra=["--config", str(cfg)]),
            capsys,
        )
        assert code == 2
        assert "momentum" in err


class TestEvaluate:
    def test_reproduces_training_accuracy_exactly(self, synth_idx_files, trained_run, tmp_path, capsys):
        history = (trained_run / "history.csv").read_text().strip().splitlines()
        final_acc = float(history[-1].split(",")[-1])
        code, out, _ = run(
            [
                "evaluate",
                "--checkpoint", str(trained_run / "model.ckpt"),
                "--test-images", str(synth_idx_files["test_images"]),
                "--test-labels", str(synth_idx_files["test_labels"]),
                "--out-dir", str(tmp_path),
            ],
            capsys,
        )
        assert code == 0
        metrics_rows = dict(
            line.split(",")
            for line in (tmp_path / "metrics.csv").read_text().strip().splitlines()[1:]
        )
        assert float(metrics_rows["accuracy"]) == pytest.approx(final_acc, abs=5e-11)
        assert f"accuracy: {final_acc:.4f}" in out

    def test_output_files_complete(self, synth_idx_files, trained_run, tmp_path, capsys):
        code, _, _ = run(
            [
                "evaluate",
                "--checkpoint", str(trained_run / "model.ckpt"),
                "--test-images", str(synth_idx_files["test_images"]),
                "--test-labels", str(synth_idx_files["test_labels"]),
                "--out-dir", str(tmp_path),
            ],
            capsys,
        )
        assert code == 0
        confusion = (tmp_path / "confusion.csv").read_text().strip().splitlines()
        assert len(confusion) == 11
        # row sums equal the per-class label counts of the test set
        from qocnn import data

        labels = data.read_idx_labels(synth_idx_files["test_labels"])
        for t in range(10):
            row_sum = sum(int(v) for v in confusion[t + 1].split(",")[1:])
            assert row_sum == int((labels == t).sum())
        auc_rows = (tmp_path / "auc_summary.csv").read_text().strip().splitlines()
        assert len(auc_rows) == 11
        for c in range(10):
            assert (tmp_path / f"roc_class_{c}.csv").exists()

    def test_arch_mismatch_exits_4(self, synth_idx_files, trained_run, tmp_path, capsys):
        code, _, err = run(
            [
                "evaluate",
                "--arch", "onn",
                "--checkpoint", str(trained_run / "model.ckpt"),
                "--test-images", str(synth_idx_files["test_images"]),
                "--test-labels", str(synth_idx_files["test_labels"]),
                "--out-dir", str(tmp_path),
            ],
            capsys,
        )
        assert code == 4
        assert "qonn" in err and "onn" in err

    def test_corrupt_checkpoint_exits_4(self, synth_idx_files, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        code, _, err = run(
            [
                "evaluate",
                "--checkpoint", str(bad),
                "--test-images", str(synth_idx_files["test_images"]),
                "--test-labels", str(synth_idx_files["test_labels"]),
                "--out-dir", str(tmp_path),
            ],
            capsys,
        )
        assert code == 4
        assert "magic" in err

    def test_missing_checkpoint_exits_2(self, synth_idx_files, tmp_path, capsys):
        code, _, _ = run(
            [
                "evaluate",
                "--checkpoint", str(tmp_path / "absent.ckpt"),
                "--test-images", str(synth_idx_files["test_images"]),
                "--test-labels", str(synth_idx_files["test_labels"]),
            ],
            capsys,
        )
        assert code == 2


class TestGradcheckCommand:
    def test_default_run_passes(self, capsys):
        code, out, _ = run(["gradcheck"], capsys)
        assert code == 0
        for kind in layers.LAYER_KINDS:
            assert kind in out
        assert "gradient check passed" in out

    def test_injected_sign_error_exits_5(self, capsys, monkeypatch):
        original = layers.sinusoid_backward
        monkeypatch.setattr(
            layers, "sinusoid_backward", lambda g, c: -original(g, c)
        )
        code, out, err = run(["gradcheck"], capsys)
        assert code == 5
        assert "FAIL" in out
        assert "gradient check failed" in err


class TestExport:
    def test_json_structure(self, trained_run, tmp_path, capsys):
        out_path = tmp_path / "model.json"
        code, _, _ = run(
            [
                "export",
                "--checkpoint", str(trained_run / "model.ckpt"),
                "--out", str(out_path),
            ],
            capsys,
        )
        assert code == 0
        payload = json.loads(out_path.read_text())
        assert payload["arch"] == "qonn"
        assert payload["lam"] == 0.2
        assert [l["kind"] for l in payload["layers"]] == [
            "complex_linear", "sinusoid", "complex_linear",
            "mod_squared", "log_softmax",
        ]
        assert payload["num_real_params"] == 2 * (392 * 128 + 128 * 10)

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code, _, _ = run(["export", "--checkpoint", str(tmp_path / "x.ckpt")], capsys)
        assert code == 2


class TestThreadCap:
    def test_env_var_applies_before_numpy(self, monkeypatch):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            monkeypatch.delenv(var, raising=False)
        monkeypatch.setenv("QOCNN_THREADS", "2")
        cli._cap_threads()
        assert os.environ["OMP_NUM_THREADS"] == "2"
        assert os.environ["OPENBLAS_NUM_THREADS"] == "2"

    def test_zero_means_default(self, monkeypatch):
        monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
        monkeypatch.setenv("QOCNN_THREADS", "0")
        cli._cap_threads()
        assert "OMP_NUM_THREADS" not in os.environ

    def test_checkpoint_atomicity_leaves_no_temp_files(self, tmp_path):
        from conftest import tiny_model

        m = tiny_model("onn")
        training.save_checkpoint(m, tmp_path / "m.ckpt")
        leftovers = [p for p in tmp_path.iterdir() if p.name != "m.ckpt"]
        assert leftovers == []
