"""End-to-end CLI behavior through subprocesses."""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ecenet.config import TrainConfig, format_config
from ecenet.data import load_dataset, save_dataset, SegSample
from ecenet.evaluate import predict_labels
from ecenet.tnsr import write_tnsr
from ecenet.train import restore_run
from ecenet.checkpoint import load_checkpoint


def run_cli(*args, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "ecenet.cli", *args],
        capture_output=True, text=True, env=full_env,
    )


TINY_CONFIG = TrainConfig(
    seed=0, total_steps=2, batch_size=2, eval_interval=0, eval_samples=4,
    unified_channels=8, attention_heads=2, se_ratio=2,
    encoder_widths=(4, 6, 8, 12), warmup_steps=2,
)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """A tiny trained run (checkpoint + config) shared across CLI tests."""
    out = tmp_path_factory.mktemp("run")
    cfg_path = out / "train.cfg"
    cfg_path.write_text(format_config(TINY_CONFIG))
    proc = run_cli("train", "--config", str(cfg_path), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    return out


class TestGenData:
    def test_writes_pairs(self, tmp_path):
        proc = run_cli("gen-data", "--seed", "3", "--count", "4",
                       "--size", "64", "--classes", "4",
                       "--out", str(tmp_path / "d"))
        assert proc.returncode == 0, proc.stderr
        samples = load_dataset(tmp_path / "d")
        assert len(samples) == 4
        assert "samples=4" in proc.stdout

    def test_env_seed_override(self, tmp_path):
        p1 = run_cli("gen-data", "--count", "2", "--out", str(tmp_path / "a"),
                     env={"ECENET_SEED": "9"})
        p2 = run_cli("gen-data", "--seed", "9", "--count", "2",
                     "--out", str(tmp_path / "b"))
        assert p1.returncode == p2.returncode == 0
        a = load_dataset(tmp_path / "a")
        b = load_dataset(tmp_path / "b")
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.image, sb.image)


class TestTrain:
    def test_writes_artifacts_and_logs(self, trained_run):
        assert (trained_run / "checkpoint.ecen").exists()
        assert (trained_run / "config.txt").exists()
        lines = (trained_run / "metrics.log").read_text().splitlines()
        assert len(lines) == 2 and lines[0].startswith("step=1 ")


class TestEval:
    def test_perfect_prediction_fixture(self, trained_run, tmp_path):
        ckpt = load_checkpoint(trained_run / "checkpoint.ecen")
        model = restore_run(ckpt, TINY_CONFIG)
        rng = np.random.default_rng(0)
        samples = []
        for _ in range(3):
            image = rng.uniform(0, 1, (3, 64, 64)).astype(np.float32)
            pred = predict_labels(model, image).astype(np.int32)
            samples.append(SegSample(image=image, gt=pred))
        save_dataset(tmp_path / "fixture", samples)

        proc = run_cli("eval", "--checkpoint", str(trained_run / "checkpoint.ecen"),
                       "--data", str(tmp_path / "fixture"))
        assert proc.returncode == 0, proc.stderr
        assert "miou=1.0000" in proc.stdout

    def test_byte_identical_stdout(self, trained_run, tmp_path):
        data_dir = tmp_path / "d"
        save_dataset(data_dir, [SegSample(
            image=np.random.default_rng(1).uniform(0, 1, (3, 64, 64)).astype(np.float32),
            gt=np.random.default_rng(2).integers(0, 4, (64, 64)).astype(np.int32))])
        a = run_cli("eval", "--checkpoint", str(trained_run / "checkpoint.ecen"),
                    "--data", str(data_dir))
        b = run_cli("eval", "--checkpoint", str(trained_run / "checkpoint.ecen"),
                    "--data", str(data_dir))
        assert a.returncode == b.returncode == 0
        assert a.stdout == b.stdout

    def test_missing_config_is_data_error(self, trained_run, tmp_path):
        lone = tmp_path / "lone.ecen"
        lone.write_bytes((trained_run / "checkpoint.ecen").read_bytes())
        save_dataset(tmp_path / "d", [SegSample(
            image=np.zeros((3, 64, 64), dtype=np.float32),
            gt=np.zeros((64, 64), dtype=np.int32))])
        proc = run_cli("eval", "--checkpoint", str(lone),
                       "--data", str(tmp_path / "d"))
        assert proc.returncode == 2


class TestExportMasks:
    def test_writes_pgm(self, trained_run, tmp_path):
        image = np.random.default_rng(4).uniform(0, 1, (3, 64, 64))
        write_tnsr(tmp_path / "img.tnsr", image.astype(np.float32))
        out_path = tmp_path / "mask.pgm"
        proc = run_cli("export-masks",
                       "--checkpoint", str(trained_run / "checkpoint.ecen"),
                       "--image", str(tmp_path / "img.tnsr"),
                       "--out", str(out_path))
        assert proc.returncode == 0, proc.stderr
        blob = out_path.read_bytes()
        assert blob.startswith(b"P5\n64 64\n3\n")
        assert len(blob) == len(b"P5\n64 64\n3\n") + 64 * 64


class TestUsageErrors:
    def test_unknown_flag(self):
        proc = run_cli("gen-data", "--bogus", "1")
        assert proc.returncode == 1
        assert proc.stdout == ""

    def test_no_subcommand(self):
        proc = run_cli()
        assert proc.returncode == 1

    def test_unknown_subcommand(self):
        proc = run_cli("frobnicate")
        assert proc.returncode == 1

    def test_missing_file_exit_2(self, tmp_path):
        proc = run_cli("eval", "--checkpoint", str(tmp_path / "nope.ecen"),
                       "--data", str(tmp_path))
        assert proc.returncode == 2


class TestGradcheckCommand:
    def test_passes_and_reports(self):
        proc = run_cli("gradcheck")
        assert proc.returncode == 0, proc.stderr
        assert "op=matmul max_rel_err=" in proc.stdout
        assert "status=FAIL" not in proc.stdout
