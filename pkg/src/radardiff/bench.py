"""Experiment driver: dataset synthesis, teacher training, distillation and benchmarking.

Everything is a deterministic function of the :class:`ExperimentConfig`;
rerunning with the same config reproduces every CSV byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from . import io
from .consistency import ConsistencyModel, DistillConfig, distill_grid, distill_step, multistep_generate, one_step_generate
from .denoisers import EDMDenoiser, TinyUNet, UNetConfig, make_optimizer, train_step, training_loss
from .detectors import CfarConfig, cfar_2d, detections_to_points
from .diffusion import CountingDenoiser, NoiseSchedule, heun_sample
from .errors import ConfigurationError, NumericError
from .geometry import BevImage, PointCloud2D, extract_points, fov_filter, rasterize
from .metrics import MetricsReport, evaluate_frame, write_table
from .radar_dsp import make_rah, rah_to_polar_grid
from .signal_sim import WaveformConfig, generate_scene, ground_truth_points, simulate_frame

log = logging.getLogger(__name__)

METHODS = ("oscfar", "teacher_edm", "distilled_cd")


# --- configuration -------------------------------------------------------------


@dataclass
class DatasetSection:
    kinds: list = field(default_factory=lambda: ["corridor", "random_boxes"])
    n_frames: int = 500
    train_fraction: float = 0.8
    noise_std: float = 1.0
    n_clutter: int = 6


@dataclass
class RadarSection:
    n_angle_bins: int = 64
    doppler_integration: str = "sum_power"
    window: str = "hann"


@dataclass
class ImageSection:
    height: int = 64
    width: int = 64
    range_extent: float = 12.8
    fov_deg: float = 120.0

    @property
    def fov(self) -> float:
        return float(np.deg2rad(self.fov_deg))


@dataclass
class TrainSection:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-5
    lambda_m: float = 0.8
    lambda_p: float = 0.2
    val_every: int = 250
    val_frames: int = 32


@dataclass
class CfarSection:
    variant: str = "OS"
    train_cells: int = 8
    guard_cells: int = 2
    os_rank: int | None = None
    pfa: float = 1e-3
    alpha_multipliers: list = field(default_factory=lambda: [1.0])


@dataclass
class BenchSection:
    methods: list = field(default_factory=lambda: list(METHODS))
    threshold: float = 0.5
    batch_size: int = 50
    n_sample_images: int = 4
    multistep_k: int = 1


SECTIONS = {
    "dataset": DatasetSection,
    "waveform": WaveformConfig,
    "radar": RadarSection,
    "image": ImageSection,
    "schedule": NoiseSchedule,
    "model": UNetConfig,
    "train": TrainSection,
    "distill": DistillConfig,
    "cfar": CfarSection,
    "bench": BenchSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    jobs: int = 1
    dataset: DatasetSection = field(default_factory=DatasetSection)
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    radar: RadarSection = field(default_factory=RadarSection)
    image: ImageSection = field(default_factory=ImageSection)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    model: UNetConfig = field(default_factory=UNetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    distill: DistillConfig = field(default_factory=DistillConfig)
    cfar: CfarSection = field(default_factory=CfarSection)
    bench: BenchSection = field(default_factory=BenchSection)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        top = {"seed", "out", "jobs"} | set(SECTIONS)
        unknown = set(d) - top
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: d[k] for k in ("seed", "out", "jobs") if k in d}
        for name, section in SECTIONS.items():
            sub = d.get(name) or {}
            allowed = {f.name for f in dataclasses.fields(section)}
            bad = set(sub) - allowed
            if bad:
                raise ConfigurationError(f"unknown keys in [{name}]: {sorted(bad)}")
            if name == "model" and "channels" in sub:
                sub = dict(sub, channels=tuple(sub["channels"]))
            kwargs[name] = section(**sub)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def validate(self) -> None:
        ds = self.dataset
        if ds.n_frames < 2 or not 0 < ds.train_fraction < 1:
            raise ConfigurationError("need n_frames >= 2 and train_fraction in (0, 1)")
        for k in ds.kinds:
            if k not in ("corridor", "random_boxes", "rock_wall"):
                raise ConfigurationError(f"unknown scene kind {k!r}")
        for m in self.bench.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}")
        if ds.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "out": self.out, "jobs": self.jobs}
        for name in SECTIONS:
            sec = getattr(self, name)
            d[name] = sec.to_dict() if hasattr(sec, "to_dict") else asdict(sec)
        return d

    def dataset_hash(self) -> str:
        """Hash of every field that influences generated data."""
        d = self.to_dict()
        relevant = {k: d[k] for k in ("seed", "dataset", "waveform", "radar", "image")}
        return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


# --- dataset -------------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: str
    config_hash: str
    frames: list

    def split(self, name: str) -> list:
        return [f for f in self.frames if f["split"] == name]

    def save(self) -> Path:
        path = Path(self.root) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1))
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        m = cls(**json.loads(path.read_text()))
        m.validate()
        return m

    def validate(self) -> None:
        for f in self.frames:
            for key in ("rah", "rah_power", "cond", "bev", "gt", "scene"):
                if not (Path(self.root) / f[key]).exists():
                    raise FileNotFoundError(f"manifest references missing file {f[key]}")
        ids = {s: {f["id"] for f in self.split(s)} for s in ("train", "test")}
        if ids["train"] & ids["test"]:
            raise ConfigurationError("train and test splits overlap")


def frame_plan(config: ExperimentConfig) -> list[dict]:
    """Frame ids, scene kinds, seeds and split labels.

    Frames cycle through the scene kinds; within each kind the first
    ``train_fraction`` of its frames form the training set.
    """
    ds = config.dataset
    n_kinds = len(ds.kinds)
    per_kind = [len(range(k, ds.n_frames, n_kinds)) for k in range(n_kinds)]
    plan = []
    for i in range(ds.n_frames):
        k, j = i % n_kinds, i // n_kinds
        split = "train" if j < int(round(ds.train_fraction * per_kind[k])) else "test"
        plan.append({"id": i, "kind": ds.kinds[k], "seed": config.seed * 100_000 + i, "split": split})
    return plan


def synthesize_frame(config: ExperimentConfig, entry: dict) -> dict:
    """Scene, radar heatmaps, aligned condition image and BEV truth for one frame."""
    im = config.image
    scene = generate_scene(entry["kind"], entry["seed"], (im.range_extent, im.fov), config.dataset.n_clutter)
    rng = np.random.default_rng([entry["seed"], 1])
    cube = simulate_frame(scene, config.waveform, config.dataset.noise_std, rng)
    r = config.radar
    rah = make_rah(cube, r.n_angle_bins, r.doppler_integration, r.window, "db", entry["id"])
    rah_pow = make_rah(cube, r.n_angle_bins, r.doppler_integration, r.window, "power", entry["id"])
    cond = rah_to_polar_grid(rah, im.height, im.width, im.range_extent, im.fov)
    gt = ground_truth_points(scene)
    gt.frame_id = entry["id"]
    bev = rasterize(gt, im.height, im.width, im.range_extent, im.fov)
    return {"scene": scene, "rah": rah, "rah_power": rah_pow, "cond": cond, "bev": bev, "gt": gt}


def _write_frame(args):
    config, root, entry = args
    fr = synthesize_frame(config, entry)
    stem = f"frames/{entry['id']:05d}"
    paths = {
        "scene": f"{stem}_scene.json",
        "rah": f"{stem}_rah.bin",
        "rah_power": f"{stem}_rahp.bin",
        "cond": f"{stem}_cond.bin",
        "bev": f"{stem}_bev.bin",
        "gt": f"{stem}_gt.csv",
    }
    root = Path(root)
    fr["scene"].save(root / paths["scene"])
    io.save_rah(root / paths["rah"], fr["rah"])
    io.save_rah(root / paths["rah_power"], fr["rah_power"])
    io.save_bev(root / paths["cond"], BevImage(fr["cond"], config.image.range_extent, config.image.fov))
    io.save_bev(root / paths["bev"], fr["bev"])
    io.write_points_csv(root / paths["gt"], fr["gt"])
    return dict(entry, **paths)


def _pool_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=8))


def build_dataset(config: ExperimentConfig, out=None) -> DatasetManifest:
    root = Path(out or Path(config.out) / "dataset")
    (root / "frames").mkdir(parents=True, exist_ok=True)
    config.save(root / "config.yaml")
    frames = _pool_map(_write_frame, [(config, str(root), e) for e in frame_plan(config)], config.jobs)
    manifest = DatasetManifest(str(root), config.dataset_hash(), frames)
    manifest.save()
    return manifest


def load_arrays(manifest: DatasetManifest, split: str):
    """Stacked ``(cond, bev)`` float32 arrays and frame entries of one split."""
    frames = manifest.split(split)
    root = Path(manifest.root)
    cond = np.stack([io.read_tensor(root / f["cond"])[0] for f in frames]).astype(np.float32)
    bev = np.stack([io.read_tensor(root / f["bev"])[0] for f in frames]).astype(np.float32)
    return cond, bev, frames


# --- training -------------------------------------------------------------------


def _rng(config: ExperimentConfig, stream: str) -> np.random.Generator:
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return np.random.default_rng([config.seed, tag])


def _header(config, kind, step, extra=None) -> dict:
    return {
        "kind": kind,
        "seed": config.seed,
        "step": step,
        "schedule_hash": config.schedule.hash(),
        "schedule": config.schedule.to_dict(),
        "model": config.model.to_dict(),
        "sigma_data": config.schedule.sigma_data,
        "dataset_hash": config.dataset_hash(),
        **(extra or {}),
    }


def build_teacher(config: ExperimentConfig) -> EDMDenoiser:
    torch.manual_seed(config.seed)
    return EDMDenoiser(TinyUNet(config.model), config.schedule.sigma_data).eval()


def load_model(path):
    """Load a teacher or distilled checkpoint, returning ``(model, header)``."""
    state, header = io.load_checkpoint(path)
    cfg = UNetConfig(**dict(header["model"], channels=tuple(header["model"]["channels"])))
    if header["kind"] == "teacher":
        model = EDMDenoiser(TinyUNet(cfg), header["sigma_data"])
    else:
        sch = header["schedule"]
        model = ConsistencyModel(TinyUNet(cfg), sch["sigma_min"], sch["sigma_max"], header["sigma_data"])
    model.load_state_dict(state)
    return model.eval(), header


def _validation_loss(model, cond, bev, config, weights) -> float:
    rng = _rng(config, "validation")
    n = min(config.train.val_frames, len(cond))
    sigma = torch.as_tensor(np.exp(config.schedule.p_mean + config.schedule.p_std * rng.standard_normal(n)), dtype=torch.float32)
    noise = torch.as_tensor(rng.standard_normal((n, 1) + cond.shape[1:]), dtype=torch.float32)
    with torch.no_grad():
        loss, _, _ = training_loss(model, torch.from_numpy(bev[:n, None]), torch.from_numpy(cond[:n, None]), sigma, noise, weights)
    return float(loss)


def run_training(manifest: DatasetManifest, config: ExperimentConfig, out=None) -> Path:
    """Train the diffusion teacher; returns the checkpoint path.

    Writes ``train_log.csv`` (per-step loss) and ``val_log.csv``.  On a
    non-finite loss the last good weights are saved before re-raising.
    """
    out = Path(out or Path(config.out) / "teacher")
    out.mkdir(parents=True, exist_ok=True)
    cond, bev, _ = load_arrays(manifest, "train")
    vcond, vbev, _ = load_arrays(manifest, "test")
    tr = config.train
    weights = (tr.lambda_m, tr.lambda_p)
    model = build_teacher(config)
    opt = make_optimizer(model, tr.lr)
    rng = _rng(config, "train")
    ckpt = out / "teacher.ckpt"
    train_rows, val_rows = [], [(0, _validation_loss(model, vcond, vbev, config, weights))]
    try:
        for step in range(1, tr.steps + 1):
            idx = rng.choice(len(cond), size=min(tr.batch_size, len(cond)), replace=False)
            loss = train_step(model, {"x0": bev[idx], "c": cond[idx]}, opt, rng, config.schedule, weights, step)
            train_rows.append((step, loss))
            if step % tr.val_every == 0 or step == tr.steps:
                val_rows.append((step, _validation_loss(model, vcond, vbev, config, weights)))
                log.info("teacher step %d loss %.5f val %.5f", step, loss, val_rows[-1][1])
    except NumericError:
        io.save_checkpoint(ckpt, model.state_dict(), _header(config, "teacher", len(train_rows), {"diverged": True}))
        raise
    io.save_checkpoint(ckpt, model.state_dict(), _header(config, "teacher", tr.steps))
    _write_rows(out / "train_log.csv", ["step", "loss"], train_rows)
    _write_rows(out / "val_log.csv", ["step", "val_loss"], val_rows)
    return ckpt


def run_distillation(teacher_ckpt, manifest: DatasetManifest, config: ExperimentConfig, out=None) -> Path:
    """Distil a consistency model from the teacher; returns the checkpoint path."""
    out = Path(out or Path(config.out) / "distilled")
    out.mkdir(parents=True, exist_ok=True)
    teacher, _ = load_model(teacher_ckpt)
    for p in teacher.parameters():
        p.requires_grad_(False)
    dc = config.distill
    student = ConsistencyModel.from_teacher(teacher, config.schedule).eval()
    target = ConsistencyModel.from_teacher(teacher, config.schedule).eval()
    for p in target.parameters():
        p.requires_grad_(False)
    opt = make_optimizer(student, dc.lr)
    grid = distill_grid(config.schedule, dc.grid_size)
    cond, bev, _ = load_arrays(manifest, "train")
    rng = _rng(config, "distill")
    rows = []
    ckpt = out / "distilled.ckpt"
    extra = {"distill": dc.to_dict()}
    try:
        for step in range(1, dc.steps + 1):
            idx = rng.choice(len(cond), size=min(dc.batch_size, len(cond)), replace=False)
            loss = distill_step(student, target, teacher, {"x0": bev[idx], "c": cond[idx]}, opt, rng, grid, dc.ema_decay, dc.metric, step)
            rows.append((step, loss))
            if step % 250 == 0:
                log.info("distill step %d loss %.6f", step, loss)
    except NumericError:
        io.save_checkpoint(ckpt, target.state_dict(), _header(config, "distilled", len(rows), dict(extra, diverged=True)))
        raise
    # the EMA target is the deployed consistency model
    io.save_checkpoint(ckpt, target.state_dict(), _header(config, "distilled", dc.steps, extra))
    _write_rows(out / "distill_log.csv", ["step", "loss"], rows)
    return ckpt


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])


# --- benchmark ------------------------------------------------------------------


def cfar_points(rah_power, config: ExperimentConfig, alpha_multiplier: float = 1.0, frame_id: int = 0) -> PointCloud2D:
    c = config.cfar
    base = CfarConfig(c.variant, c.train_cells, c.guard_cells, c.os_rank, None, c.pfa)
    cfg = dataclasses.replace(base, scale_factor=base.scale_factor * alpha_multiplier)
    pts = detections_to_points(cfar_2d(rah_power, cfg), rah_power, frame_id)
    return fov_filter(pts, config.image.fov, config.image.range_extent)


def _cfar_frame(args):
    config, root, f, mults = args
    rah = io.load_rah(Path(root) / f["rah_power"])
    gt = io.read_points_csv(Path(root) / f["gt"], f["id"])
    out = []
    for m in mults:
        t0 = time.perf_counter()
        pts = cfar_points(rah, config, m, f["id"])
        out.append((evaluate_frame(gt, pts, scene=f["kind"]), time.perf_counter() - t0, pts))
    return out


def predict_images(model, cond: np.ndarray, frames: list, config: ExperimentConfig, method: str):
    """Generate clamped BEV predictions; returns ``(images, network_calls_per_frame, seconds)``."""
    counted = CountingDenoiser(model)
    out, elapsed = [], 0.0
    bs = config.bench.batch_size
    for start in range(0, len(frames), bs):
        chunk = frames[start : start + bs]
        c = cond[start : start + bs].astype(np.float64)
        noise = np.stack([_rng(config, f"{method}/{f['id']}").standard_normal(c.shape[1:]) for f in chunk])
        t0 = time.perf_counter()
        if method == "teacher_edm":
            x = np.clip(heun_sample(counted, c, config.schedule, x_init=config.schedule.sigma_max * noise), 0, 1)
        else:
            k = config.bench.multistep_k
            rng = _NoiseFeeder(noise, _rng(config, f"{method}/renoise/{start}"))
            if k == 1:
                x = one_step_generate(counted, c, config.schedule, rng)
            else:
                x = multistep_generate(counted, c, config.schedule, k, rng)
        elapsed += time.perf_counter() - t0
        out.append(x)
    n_chunks = -(-len(frames) // bs)
    return np.concatenate(out), counted.calls // max(n_chunks, 1), elapsed


class _NoiseFeeder:
    """Generator stand-in whose first draw returns pre-made per-frame noise."""

    def __init__(self, first, rng):
        self.first, self.rng = first, rng

    def standard_normal(self, shape):
        if self.first is not None:
            x, self.first = self.first, None
            return x
        return self.rng.standard_normal(shape)


def run_benchmark(manifest: DatasetManifest, config: ExperimentConfig, methods=None, checkpoints=None, out=None) -> dict:
    """Evaluate methods on the test split and write reports.

    Outputs per method: ``<method>_frames.csv``, ``<method>_cdf.csv`` and
    sample PGM images; plus ``table.csv`` and ``metadata.json``.
    """
    methods = list(methods or config.bench.methods)
    checkpoints = dict(checkpoints or {})
    out = Path(out or Path(config.out) / "bench")
    (out / "samples").mkdir(parents=True, exist_ok=True)
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}")
        if m != "oscfar":
            path = checkpoints.get(m)
            if path is None or not Path(path).exists():
                raise FileNotFoundError(f"method {m!r} needs a checkpoint, none found at {path}")

    root = Path(manifest.root)
    cond, _, frames = load_arrays(manifest, "test")
    gts = {f["id"]: io.read_points_csv(root / f["gt"], f["id"]) for f in frames}
    reports, meta = [], {
        "config_hash": manifest.config_hash,
        "n_test_frames": len(frames),
        "doppler_integration": config.radar.doppler_integration,
        "bev_extraction": f"threshold >= {config.bench.threshold}",
        "training_sigma": {"p_mean": config.schedule.p_mean, "p_std": config.schedule.p_std},
        "distill_grid_size": config.distill.grid_size,
        "units": "metres, Cartesian",
        "methods": {},
    }
    n_samples = config.bench.n_sample_images

    for m in methods:
        if m == "oscfar":
            mults = list(config.cfar.alpha_multipliers)
            res = _pool_map(_cfar_frame, [(config, str(root), f, mults) for f in frames], config.jobs)
            cands = []
            for j, mult in enumerate(mults):
                rep = MetricsReport(m, [r[j][0] for r in res])
                cands.append((rep.aggregate()["cd"], j, rep))
            finite = [c for c in cands if np.isfinite(c[0])]
            _, best, rep = min(finite or cands, key=lambda c: (c[0], c[1]))
            for i, f in enumerate(frames[:n_samples]):
                img = rasterize(res[i][best][2], config.image.height, config.image.width, config.image.range_extent, config.image.fov)
                io.write_pgm(out / "samples" / f"{m}_{f['id']:05d}.pgm", img.values)
            c = config.cfar
            base = CfarConfig(c.variant, c.train_cells, c.guard_cells, c.os_rank, None, c.pfa)
            meta["methods"][m] = {
                "alpha_sweep": [
                    {"multiplier": mults[j], "alpha": base.scale_factor * mults[j], "mean_cd": cd} for cd, j, _ in cands
                ],
                "chosen_alpha": base.scale_factor * mults[best],
                "network_calls_per_frame": 0,
                "seconds_per_frame": float(np.mean([r[best][1] for r in res])),
            }
        else:
            model, header = load_model(checkpoints[m])
            imgs, calls, secs = predict_images(model, cond, frames, config, m)
            rep = MetricsReport(m)
            for i, f in enumerate(frames):
                bev = BevImage(imgs[i], config.image.range_extent, config.image.fov)
                pts = extract_points(bev, config.bench.threshold, f["id"])
                rep.frames.append(evaluate_frame(gts[f["id"]], pts, scene=f["kind"]))
                if i < n_samples:
                    io.write_pgm(out / "samples" / f"{m}_{f['id']:05d}.pgm", imgs[i])
            meta["methods"][m] = {
                "checkpoint_step": header["step"],
                "network_calls_per_frame": calls,
                "sampler_steps": config.schedule.n_steps if m == "teacher_edm" else config.bench.multistep_k,
                "seconds_per_frame": secs / max(len(frames), 1),
            }
        rep.write_csv(out / f"{m}_frames.csv")
        if rep.valid():
            rep.write_cdf_csv(out / f"{m}_cdf.csv")
        meta["methods"][m]["aggregate"] = rep.aggregate()
        reports.append(rep)

    for i, f in enumerate(frames[:n_samples]):
        io.write_pgm(out / "samples" / f"truth_{f['id']:05d}.pgm", io.read_tensor(root / f["bev"])[0])
        io.write_pgm(out / "samples" / f"cond_{f['id']:05d}.pgm", cond[i])
    write_table(reports, out / "table.csv")
    (out / "metadata.json").write_text(json.dumps(meta, indent=1, default=io._json_default))
    return {"reports": {r.method: r for r in reports}, "metadata": meta, "out": out}


def run_pipeline(config: ExperimentConfig) -> dict:
    """dataset -> train -> distill -> bench under ``config.out``."""
    manifest = build_dataset(config)
    ckpts = {}
    if {"teacher_edm", "distilled_cd"} & set(config.bench.methods):
        ckpts["teacher_edm"] = run_training(manifest, config)
    if "distilled_cd" in config.bench.methods:
        ckpts["distilled_cd"] = run_distillation(ckpts["teacher_edm"], manifest, config)
    result = run_benchmark(manifest, config, checkpoints=ckpts)
    result["checkpoints"] = ckpts
    return result
