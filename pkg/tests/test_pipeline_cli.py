import json
import shutil

import numpy as np
import pytest

from ovfuse.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from ovfuse.errors import ConfigError, StageError
from ovfuse.pipeline import PipelineConfig, manifest_hash, run_pipeline
from ovfuse.tensor import read_tensor, write_tensor

from conftest import QUICK, small_spec


def _sets(overrides=QUICK):
    out = []
    for k, v in overrides.items():
        out += ["--set", f"{k}={json.dumps(v)}"]
    return out


@pytest.fixture
def scene_dir(small_scene, tmp_path):
    # private copy so tests may add or break files
    d = tmp_path / "scene"
    shutil.copytree(small_scene.parent, d)
    return d


def test_run_writes_artifacts_and_metrics(scene_dir, capsys):
    out = scene_dir / "out"
    assert main(["run", "--config", str(scene_dir / "pipeline.json"), "--out", str(out)] + _sets()) == EXIT_OK
    assert "distilled mIoU" in capsys.readouterr().out
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["miou"] <= 1.0
    assert set(metrics["models"]) == {"A", "B"}
    for name in ("features_A.ovt", "fused.ovt", "superpoints.ovt", "distilled.ovt", "predictions.ply",
                 "capability_A.json", "model/model.json", "train_log.json", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["schedule"]["total_epochs"] == 4
    assert "metrics.json" in manifest["files"]


def test_unknown_key_is_invalid(scene_dir, capsys):
    code = main(["run", "--config", str(scene_dir / "pipeline.json"), "--set", "bogus=1"])
    assert code == EXIT_INVALID
    assert "bogus" in capsys.readouterr().err
    assert main(["run", "--config", str(scene_dir / "pipeline.json"), "--set", "schedule.lrr=1"]) == EXIT_INVALID


def test_bad_values_are_invalid(scene_dir):
    cfg = str(scene_dir / "pipeline.json")
    assert main(["run", "--config", cfg, "--set", "sigma_rel=0"]) == EXIT_INVALID
    assert main(["run", "--config", cfg, "--set", "voxel_size=0.1"]) == EXIT_INVALID
    assert main(["project", "--scene", "x.ply", "--views", "v.json", "--sigma-rel", "-1", "--out", "o"]) == EXIT_INVALID
    assert main(["nonsense"]) == EXIT_INVALID


def test_missing_capability_file_names_fuse_stage(scene_dir, capsys):
    cfg = PipelineConfig.load(scene_dir / "pipeline.json", QUICK | {"capabilities": {"A": "nowhere.json"}})
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, scene_dir / "out")
    assert info.value.stage == "fuse" and "nowhere.json" in str(info.value.path)
    code = main(["run", "--config", str(scene_dir / "pipeline.json"), "--out", str(scene_dir / "o2"),
                 "--set", 'capabilities={"A": "nowhere.json"}'] + _sets())
    assert code == EXIT_RUNTIME
    assert "fuse" in capsys.readouterr().err


def test_corrupt_camera_is_runtime_error(scene_dir, capsys):
    (scene_dir / "views" / "view_000.json").write_text("{")
    code = main(["run", "--config", str(scene_dir / "pipeline.json"), "--out", str(scene_dir / "o")] + _sets())
    assert code == EXIT_RUNTIME
    assert "load" in capsys.readouterr().err


def test_config_requires_capability_source():
    with pytest.raises(ConfigError):
        PipelineConfig(scene="s.ply", views=["v.json"], models=["A"], classes="c.json")


def test_identity_superpoints_run(scene_dir):
    out = run_pipeline(PipelineConfig.load(scene_dir / "pipeline.json", QUICK | {"superpoints.mode": "identity"}),
                       scene_dir / "out")
    n = len(read_tensor(out / "fused.ovt"))
    assert read_tensor(out / "superpoints.ovt").reshape(-1).tolist() == list(range(n))


def test_repeat_runs_share_manifest(scene_dir):
    cfg = PipelineConfig.load(scene_dir / "pipeline.json", QUICK)
    a = run_pipeline(cfg, scene_dir / "a")
    b = run_pipeline(cfg, scene_dir / "b")
    assert manifest_hash(a) == manifest_hash(b)
    cfg2 = PipelineConfig.load(scene_dir / "pipeline.json", QUICK | {"schedule.seed": 1})
    assert manifest_hash(run_pipeline(cfg2, scene_dir / "c")) != manifest_hash(a)


def test_subcommands_chain(scene_dir, capsys):
    d, o = scene_dir, scene_dir / "cli"
    o.mkdir()
    views = [str(d / v) for v in json.loads((d / "pipeline.json").read_text())["views"]]
    scene, classes, labels = str(d / "scene.ply"), str(d / "classes.json"), str(d / "labels.ovt")

    assert main(["project", "--scene", scene, "--views", *views, "--out", str(o / "corr.ovt")]) == EXIT_OK
    assert read_tensor(o / "corr.ovt").shape[1] == 4  # point, view, row, col
    for m in ("A", "B"):
        assert main(["align", "--scene", scene, "--views", *views, "--model", m, "--classes", classes,
                     "--sigma-rel", "0.02", "--out", str(o / f"f_{m}.ovt")]) == EXIT_OK
        assert main(["capability", "--corpus", str(d / "capability" / "manifest.json"), "--model", m,
                     "--classes", classes, "--out", str(o / f"cap_{m}.json")]) == EXIT_OK
    assert main(["fuse", "--features", str(o / "f_A.ovt"), str(o / "f_B.ovt"),
                 "--caps", str(o / "cap_A.json"), str(o / "cap_B.json"),
                 "--classes", classes, "--out", str(o / "fused.ovt")]) == EXIT_OK
    assert main(["superpoints", "--mesh", scene, "--min-size", "5", "--out", str(o / "sp.ovt")]) == EXIT_OK
    assert main(["superpoints", "--mesh", scene, "--identity", "--out", str(o / "id.ovt")]) == EXIT_OK
    assert main(["distill", "--scene", scene, "--targets", str(o / "fused.ovt"), "--superpoints", str(o / "sp.ovt"),
                 "--classes", classes, "--epochs", "3", "--phase1", "2", "--out", str(o / "model")]) == EXIT_OK
    assert main(["eval", "--features", str(o / "fused.ovt"), "--classes", classes, "--labels", labels,
                 "--out", str(o / "m.json")]) == EXIT_OK
    assert json.loads((o / "m.json").read_text())["miou"] > 0.5
    assert main(["eval", "--checkpoint", str(o / "model"), "--scene", scene, "--classes", classes,
                 "--labels", labels]) == EXIT_OK
    assert main(["eval", "--checkpoint", str(o / "model"), "--classes", classes, "--labels", labels]) == EXIT_INVALID
    assert main(["distill", "--scene", scene, "--targets", str(o / "fused.ovt"), "--classes", classes,
                 "--epochs", "2", "--phase1", "3", "--out", str(o / "bad")]) == EXIT_INVALID


def test_capability_stack_mode(tmp_path):
    rng = np.random.default_rng(0)
    stack = rng.random((2, 2, 8, 8)).astype(np.float32)
    stack[..., 2:5, 2:5] += 5.0
    write_tensor(stack, tmp_path / "stack.ovt")
    assert main(["capability", "--stack", str(tmp_path / "stack.ovt"), "--points", "2",
                 "--out", str(tmp_path / "p")]) == EXIT_OK
    pts = json.loads((tmp_path / "p" / "prompts.json").read_text())["points"]
    assert len(pts) == 2 and all(2 <= r < 5 and 2 <= c < 5 for r, c in pts)
    assert main(["capability", "--out", str(tmp_path / "x")]) == EXIT_INVALID


def test_synth_command(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps(small_spec().to_json()))
    assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert json.loads((tmp_path / "s" / "pipeline.json").read_text())["models"] == ["A", "B"]
