"""End-to-end command line flow on a micro dataset."""
import subprocess
import sys

import numpy as np
import pytest

from partgen.cli import main
from partgen.geometry import load_mesh


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    main(["toy", "--out", str(root / "meshes"), "--count", "2", "--seed", "3"])
    main(["prep", "--meshes", str(root / "meshes"), "--out", str(root / "shards"),
          "--n-vol", "192", "--n-surf", "96", "--seed", "1"])
    main(["train", "--data", str(root / "shards"), "--out", str(root / "run"),
          "--epochs", "8", "--batch-shapes", "2", "--points-vol", "48",
          "--points-surf", "64", "--lr", "1e-3", "--warmup", "4",
          "--code-dim", "16", "--parts", "4", "--d-model", "16", "--d-pe", "16",
          "--layers", "1", "--heads", "2", "--checkpoint-every", "4"])
    return root


def test_toy_writes_meshes_and_meta(workspace):
    mesh = load_mesh(workspace / "meshes" / "toy_0000.obj")
    assert mesh.num_vertices > 0
    assert (workspace / "meshes" / "toy_0001.json").exists()


def test_prep_writes_manifest(workspace):
    assert (workspace / "shards" / "manifest.json").exists()
    assert len(list((workspace / "shards").glob("*.shard"))) == 2


def test_prep_rejects_empty_input(tmp_path):
    with pytest.raises(SystemExit):
        main(["prep", "--meshes", str(tmp_path), "--out", str(tmp_path / "x")])


def test_train_writes_checkpoint_and_metrics(workspace):
    assert (workspace / "run" / "checkpoint.pt").exists()
    assert (workspace / "run" / "metrics.jsonl").exists()


def test_extract_writes_obj(workspace, capsys):
    out = workspace / "mesh.obj"
    main(["extract", "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
          "--shape", "0", "--resolution", "16", "--attribute", "--out", str(out)])
    assert out.exists()
    assert "evals" in capsys.readouterr().out


def test_extract_sampled_code(workspace):
    out = workspace / "sampled.obj"
    main(["extract", "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
          "--seed", "9", "--resolution", "16", "--out", str(out)])
    assert out.exists()


def test_eval_reports_iou(workspace, capsys):
    main(["eval", "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
          "--data", str(workspace / "shards"), "--meshes", str(workspace / "meshes"),
          "--grid", "12"])
    out = capsys.readouterr().out
    assert "mean IoU over 2 shapes" in out


def test_invert_writes_partset(workspace, capsys):
    out = workspace / "fit.pt"
    main(["invert", "--checkpoint", str(workspace / "run" / "checkpoint.pt"),
          "--mesh", str(workspace / "meshes" / "toy_0000.obj"),
          "--out", str(out), "--iters-code", "4", "--iters-parts", "4"])
    assert out.exists()
    assert "stage2 bce=" in capsys.readouterr().out


def test_console_script_help():
    got = subprocess.run([sys.executable, "-m", "pytest", "--version"],
                         capture_output=True)
    assert got.returncode == 0   # sanity that subprocess works at all
    got = subprocess.run(["partgen", "--help"], capture_output=True, text=True)
    assert got.returncode == 0
    assert "toy" in got.stdout and "serve" in got.stdout
