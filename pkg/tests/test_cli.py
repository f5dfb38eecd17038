"""Command-line surface: subcommands, config round-trip, exit codes."""

import json

import numpy as np
import pytest

from melunet.cli import RunConfig, main
from melunet.data import make_image_dataset
from melunet.ensemble import load_scores_csv, save_scores_csv, ScoreMatrix
from melunet.errors import ConfigurationError


def _write_csv_dataset(path, n=36, n_classes=3, size=6, seed=0, scale=40.0):
    data, labels = make_image_dataset(n, n_classes, size, seed=seed, noise=0.2)
    data = data.reshape(n, -1) * scale
    rows = [",".join(f"{v:.6f}" for v in row) + f",{label}"
            for row, label in zip(data, labels)]
    path.write_text("\n".join(rows) + "\n")
    return size


class TestRunConfig:
    def test_roundtrip_is_identity(self, tmp_path):
        cfg = RunConfig(command="evaluate", families=["relu", "melu_k8"],
                        max_inputs=[1.0, 255.0], epochs=3, seed=42,
                        out="results")
        path = tmp_path / "cfg.json"
        cfg.to_file(path)
        assert RunConfig.from_file(path) == cfg

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"momentum": 0.9}))
        with pytest.raises(ConfigurationError):
            RunConfig.from_file(path)

    def test_defaults_match_protocol(self):
        cfg = RunConfig()
        assert cfg.batch_size == 30
        assert cfg.lr == 0.0001
        assert cfg.epochs == 30
        assert cfg.folds == 5


class TestBasisCommand:
    def test_prints_schedule_csv(self, capsys):
        assert main(["basis", "--max-input", "256", "--hats", "7"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "j,a,lambda"
        assert lines[1] == "1,512,512"
        assert lines[2] == "2,256,256"
        assert lines[-1] == "7,896,128"

    def test_bad_hat_count_exits_one(self, capsys):
        assert main(["basis", "--max-input", "256", "--hats", "6"]) == 1


class TestGradcheckCommand:
    def test_single_family_passes(self, capsys):
        code = main(["gradcheck", "--family", "prelu", "--points", "200"])
        out = capsys.readouterr().out
        assert code == 0
        assert "PASS" in out

    def test_melu_k8_reports_requested_configuration(self, capsys):
        code = main(["gradcheck", "--family", "melu", "--k", "8",
                     "--max-input", "256", "--points", "100"])
        out = capsys.readouterr().out
        assert code == 0
        assert "melu_k8" in out

    def test_published_sign_mode_reports_skips(self, capsys):
        code = main(["gradcheck", "--family", "srelu", "--family", "aplu",
                     "--paper-gradients", "--points", "100"])
        out = capsys.readouterr().out
        assert code == 0
        assert "intentionally skipped" in out


class TestTrainCommand:
    def test_writes_checkpoint_and_scores(self, tmp_path, capsys):
        data_path = tmp_path / "train.csv"
        size = _write_csv_dataset(data_path)
        out = tmp_path / "out"
        code = main(["train", "--data", str(data_path),
                     "--shape", f"1x{size}x{size}",
                     "--family", "prelu", "--max-input", "1",
                     "--epochs", "2", "--batch-size", "10", "--seed", "3",
                     "--out", str(out)])
        assert code == 0
        assert (out / "checkpoint.json").exists()
        assert (out / "loss_trace.csv").exists()
        scores = load_scores_csv(out / "train__prelu@1.scores.csv")
        assert scores.scores.shape == (36, 3)

    def test_missing_dataset_exits_one(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope.csv"),
                     "--family", "relu"])
        assert code == 1

    def test_normalize_to_maxinput_rescales_features(self, tmp_path):
        data_path = tmp_path / "train.csv"
        size = _write_csv_dataset(data_path, scale=1.0)
        out = tmp_path / "out"
        code = main(["train", "--data", str(data_path),
                     "--shape", f"1x{size}x{size}",
                     "--normalize-to-maxinput",
                     "--family", "srelu", "--max-input", "255",
                     "--epochs", "1", "--batch-size", "12", "--out", str(out)])
        assert code == 0
        assert (out / "checkpoint.json").exists()

    def test_idx_pair_accepted(self, tmp_path):
        import struct
        from melunet.data import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(24, 6, 6)).astype(np.uint8)
        labels = (np.arange(24) % 2).astype(np.uint8)
        img_path = tmp_path / "img.idx"
        lab_path = tmp_path / "lab.idx"
        img_path.write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, 24, 6, 6)
                             + images.tobytes())
        lab_path.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, 24)
                             + labels.tobytes())
        out = tmp_path / "out"
        code = main(["train", "--format", "idx", "--data", str(img_path),
                     "--labels", str(lab_path), "--family", "relu",
                     "--max-input", "1", "--epochs", "1",
                     "--batch-size", "8", "--out", str(out)])
        assert code == 0
        assert (out / "img__relu@1.scores.csv").exists()


class TestEnsembleCommand:
    def test_fuses_and_scores(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, size=12)
        paths = []
        for i in range(3):
            raw = rng.uniform(0.1, 1, size=(12, 3))
            m = ScoreMatrix(raw / raw.sum(1, keepdims=True), f"m{i}@1")
            p = tmp_path / f"m{i}.csv"
            save_scores_csv(m, p)
            paths.append(p)
        labels_path = tmp_path / "labels.csv"
        labels_path.write_text("\n".join(str(v) for v in labels) + "\n")
        args = ["ensemble", "--out", str(tmp_path / "out")]
        for p in paths:
            args += ["--scores", str(p)]
        args += ["--labels", str(labels_path)]
        assert main(args) == 0
        out = capsys.readouterr().out
        assert "fused accuracy" in out
        fused = load_scores_csv(tmp_path / "out" / "fused.scores.csv")
        assert fused.scores.shape == (12, 3)


class TestEvaluateAndReport:
    def _evaluate(self, tmp_path, out_name, seed="5"):
        data_path = tmp_path / "mini.csv"
        size = _write_csv_dataset(data_path, n=36, n_classes=3, size=6)
        out = tmp_path / out_name
        code = main(["evaluate", "--data", str(data_path),
                     "--shape", f"1x{size}x{size}",
                     "--family", "relu", "--family", "prelu",
                     "--max-input", "1",
                     "--epochs", "1", "--batch-size", "10", "--folds", "3",
                     "--seed", seed, "--out", str(out)])
        assert code == 0
        return out

    def test_evaluate_emits_tables_and_cells(self, tmp_path, capsys):
        out = self._evaluate(tmp_path, "run1")
        assert (out / "accuracy_table.csv").exists()
        assert (out / "wilcoxon.csv").exists()
        assert (out / "report.md").exists()
        assert (out / "cells" / "mini__relu@1.scores.csv").exists()
        assert (out / "cells" / "mini.labels.csv").exists()
        table = (out / "accuracy_table.csv").read_text()
        assert table.splitlines()[0] == "model,mini,avg"
        assert any(ln.startswith("ens@1,") for ln in table.splitlines())
        assert any(ln.startswith("eens,") for ln in table.splitlines())

    def test_byte_identical_reruns(self, tmp_path, capsys):
        out1 = self._evaluate(tmp_path, "run1")
        out2 = self._evaluate(tmp_path, "run2")
        for name in ("accuracy_table.csv", "wilcoxon.csv", "report.md"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        for cell in sorted((out1 / "cells").iterdir()):
            twin = out2 / "cells" / cell.name
            assert cell.read_bytes() == twin.read_bytes()

    def test_report_rebuilds_identical_accuracy_table(self, tmp_path, capsys):
        out = self._evaluate(tmp_path, "run1")
        rebuilt = tmp_path / "rebuilt"
        code = main(["report", "--results", str(out / "cells"),
                     "--out", str(rebuilt)])
        assert code == 0
        original = (out / "accuracy_table.csv").read_text()
        again = (rebuilt / "accuracy_table.csv").read_text()
        assert sorted(original.splitlines()) == sorted(again.splitlines())

    def test_report_missing_results_dir_exits_one(self, tmp_path):
        assert main(["report", "--results", str(tmp_path / "nope")]) == 1

    def test_empty_dataset_file_exits_one(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        code = main(["evaluate", "--data", str(empty), "--family", "relu"])
        assert code == 1

    def test_config_file_drives_evaluate(self, tmp_path, capsys):
        data_path = tmp_path / "mini.csv"
        size = _write_csv_dataset(data_path, n=36, n_classes=3, size=6)
        cfg = RunConfig(data=[str(data_path)], shape=f"1x{size}x{size}",
                        families=["relu"], max_inputs=[1.0], epochs=1,
                        batch_size=10, folds=3, seed=2,
                        out=str(tmp_path / "cfg_out"))
        cfg_path = tmp_path / "cfg.json"
        cfg.to_file(cfg_path)
        assert main(["evaluate", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "cfg_out" / "accuracy_table.csv").exists()
