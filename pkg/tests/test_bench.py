import json

import numpy as np
import pytest
import yaml

from radardiff.bench import (
    DatasetManifest,
    ExperimentConfig,
    build_dataset,
    cfar_points,
    frame_plan,
    load_model,
    run_benchmark,
    run_pipeline,
    synthesize_frame,
)
from radardiff.cli import main
from radardiff.errors import ConfigurationError
from radardiff import io

TINY = {
    "seed": 3,
    "dataset": {"n_frames": 8, "train_fraction": 0.5},
    "waveform": {"chirps_per_frame": 8},
    "image": {"height": 16, "width": 16},
    "model": {"channels": [4, 8], "emb_dim": 8},
    "schedule": {"n_steps": 4},
    "train": {"steps": 3, "batch_size": 2, "lr": 1e-3, "val_every": 2, "val_frames": 2},
    "distill": {"steps": 2, "batch_size": 2, "grid_size": 4},
    "cfar": {"alpha_multipliers": [0.5, 1.0]},
    "bench": {"batch_size": 3, "n_sample_images": 2},
}


def tiny_config(tmp_path, **over) -> ExperimentConfig:
    d = json.loads(json.dumps(TINY))
    d.update(over)
    d["out"] = str(tmp_path / "run")
    return ExperimentConfig.from_dict(d)


def test_defaults_roundtrip(tmp_path):
    cfg = ExperimentConfig()
    cfg.save(tmp_path / "c.yaml")
    back = ExperimentConfig.load(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()
    assert back.train.lambda_m == 0.8 and back.train.lambda_p == 0.2
    assert back.schedule.n_steps == 80 and back.distill.grid_size == 18


@pytest.mark.parametrize(
    "bad",
    [
        {"learning_rate": 1},
        {"train": {"stepz": 3}},
        {"dataset": {"kinds": ["parking_lot"]}},
        {"dataset": {"train_fraction": 1.0}},
        {"bench": {"methods": ["pointnet"]}},
        {"schedule": {"n_steps": 0}},
        {"distill": {"ema_decay": 1.5}},
    ],
)
def test_config_rejects_invalid(bad):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(bad)


def test_dataset_hash_ignores_training_fields():
    a = ExperimentConfig.from_dict({"train": {"steps": 1}})
    b = ExperimentConfig.from_dict({"train": {"steps": 2}})
    c = ExperimentConfig.from_dict({"dataset": {"noise_std": 2.0}})
    assert a.dataset_hash() == b.dataset_hash() != c.dataset_hash()


def test_frame_plan_first_k_split():
    cfg = ExperimentConfig.from_dict({"dataset": {"n_frames": 20, "train_fraction": 0.8}})
    plan = frame_plan(cfg)
    for kind in ("corridor", "random_boxes"):
        frames = [p for p in plan if p["kind"] == kind]
        assert [p["split"] for p in frames] == ["train"] * 8 + ["test"] * 2
    assert len({p["seed"] for p in plan}) == 20


def test_synthesized_frame_is_aligned(tmp_path):
    cfg = tiny_config(tmp_path)
    fr = synthesize_frame(cfg, frame_plan(cfg)[0])
    assert fr["cond"].shape == fr["bev"].values.shape == (16, 16)
    assert 0 <= fr["cond"].min() and fr["cond"].max() <= 1
    assert set(np.unique(fr["bev"].values)) <= {0.0, 1.0}
    # the truth is occupied where the condition is bright on average
    occ = fr["bev"].values > 0
    assert fr["cond"][occ].mean() > fr["cond"][~occ].mean()


def test_cfar_baseline_finds_structure(tmp_path):
    cfg = tiny_config(tmp_path)
    fr = synthesize_frame(cfg, frame_plan(cfg)[0])
    pts = cfar_points(fr["rah_power"], cfg, 0.5)
    assert len(pts) > 0
    assert np.all(pts.ranges <= cfg.image.range_extent)


def test_pipeline_outputs_and_determinism(tmp_path):
    cfg = tiny_config(tmp_path)
    result = run_pipeline(cfg)
    out = tmp_path / "run"
    bench = out / "bench"
    for name in ("table.csv", "metadata.json", "oscfar_frames.csv", "teacher_edm_frames.csv", "distilled_cd_frames.csv"):
        assert (bench / name).exists(), name
    meta = json.loads((bench / "metadata.json").read_text())
    assert meta["methods"]["teacher_edm"]["network_calls_per_frame"] == 2 * 3 + 1
    assert meta["methods"]["distilled_cd"]["network_calls_per_frame"] == 1
    assert len(list((bench / "samples").glob("*.pgm"))) == 2 * 5
    manifest = DatasetManifest.load(out / "dataset")
    assert manifest.config_hash == cfg.dataset_hash()
    assert (out / "teacher" / "train_log.csv").read_text().count("\n") == 4
    _, header = load_model(result["checkpoints"]["distilled_cd"])
    assert header["kind"] == "distilled" and header["seed"] == 3

    first = {p.name: p.read_bytes() for p in bench.glob("*.csv")}
    cfg2 = tiny_config(tmp_path)
    cfg2.out = str(tmp_path / "run2")
    run_pipeline(cfg2)
    second = {p.name: p.read_bytes() for p in (tmp_path / "run2" / "bench").glob("*.csv")}
    assert first == second


def test_benchmark_requires_checkpoints(tmp_path):
    cfg = tiny_config(tmp_path)
    m = build_dataset(cfg)
    with pytest.raises(FileNotFoundError):
        run_benchmark(m, cfg, ["teacher_edm"], {"teacher_edm": tmp_path / "nope.ckpt"})


def test_manifest_detects_missing_files(tmp_path):
    cfg = tiny_config(tmp_path)
    m = build_dataset(cfg)
    (tmp_path / "run" / "dataset" / m.frames[0]["bev"]).unlink()
    with pytest.raises(FileNotFoundError):
        DatasetManifest.load(tmp_path / "run" / "dataset")


def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY))
    out = str(tmp_path / "cli")
    common = ["--config", str(cfg_path), "--out", out, "--seed", "5", "--jobs", "1"]
    assert main(["dataset", *common]) == 0
    assert main(["train", *common]) == 0
    assert main(["distill", *common]) == 0
    capsys.readouterr()
    assert main(["bench", *common, "--methods", "oscfar,distilled_cd"]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].startswith("method,")
    assert {l.split(",")[0] for l in table.splitlines()[1:]} == {"oscfar", "distilled_cd"}

    rah = sorted((tmp_path / "cli" / "dataset" / "frames").glob("*_rah.bin"))[0]
    ckpt = tmp_path / "cli" / "distilled" / "distilled.ckpt"
    assert main(["infer", *common, "--checkpoint", str(ckpt), "--average", "2", str(rah)]) == 0
    produced = list((tmp_path / "cli" / "infer").iterdir())
    assert {p.suffix for p in produced} == {".bin", ".pgm", ".csv", ".json"}


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["dataset", "--config", str(bad)]) == 2
    assert main(["train", "--out", str(tmp_path / "missing")]) == 3
    err = capsys.readouterr().err
    assert "configuration error" in err and "missing input" in err


def test_infer_rejects_power_heatmap(tmp_path):
    cfg = tiny_config(tmp_path)
    fr = synthesize_frame(cfg, frame_plan(cfg)[0])
    io.save_rah(tmp_path / "p.bin", fr["rah_power"])
    from radardiff.bench import build_teacher, _header

    io.save_checkpoint(tmp_path / "t.ckpt", build_teacher(cfg).state_dict(), _header(cfg, "teacher", 0))
    assert main(["infer", "--checkpoint", str(tmp_path / "t.ckpt"), "--out", str(tmp_path), str(tmp_path / "p.bin")]) == 2
