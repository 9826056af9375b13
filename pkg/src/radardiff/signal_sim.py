"""Synthetic 2D scenes and the ideal point-scatterer FMCW IF signal they produce.

Each scatterer contributes a separable complex exponential to the radar
cube: a beat tone of frequency ``2*S*r/C`` along fast time, a phase ramp of
``4*pi*v*T_c/lambda`` per chirp, and a phase ramp of
``2*pi*l*sin(theta)/lambda`` per virtual antenna.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, RangeViolationError
from .geometry import DEFAULT_FOV, DEFAULT_RANGE_EXTENT, PointCloud2D, fov_filter

C = 3e8
SCENE_KINDS = ("corridor", "random_boxes", "rock_wall")


@dataclass(frozen=True)
class WaveformConfig:
    carrier_frequency: float = 77e9
    slope_rate: float = 3e13
    chirp_duration: float = 50e-6
    samples_per_chirp: int = 256
    sample_rate: float = 10e6
    chirps_per_frame: int = 64
    n_tx: int = 2
    n_rx: int = 4
    antenna_spacing: float | None = None  # None -> lambda / 2
    max_bandwidth: float = 4e9

    def __post_init__(self):
        for name in ("samples_per_chirp", "chirps_per_frame", "n_tx", "n_rx"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("carrier_frequency", "slope_rate", "chirp_duration", "sample_rate"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", self.wavelength / 2)
        elif self.antenna_spacing <= 0:
            raise ConfigurationError("antenna_spacing must be positive")
        if self.bandwidth > self.max_bandwidth:
            raise ConfigurationError(
                f"swept bandwidth {self.bandwidth:.3g} Hz exceeds usable {self.max_bandwidth:.3g} Hz"
            )
        if self.samples_per_chirp / self.sample_rate > self.chirp_duration:
            raise ConfigurationError("sampling window longer than the chirp")

    @property
    def wavelength(self) -> float:
        return C / self.carrier_frequency

    @property
    def n_virtual(self) -> int:
        return self.n_tx * self.n_rx

    @property
    def bandwidth(self) -> float:
        return self.slope_rate * self.samples_per_chirp / self.sample_rate

    @property
    def max_range(self) -> float:
        """Largest range covered by the ``N_s / 2`` retained range bins."""
        return self.range_bin_size * (self.samples_per_chirp // 2)

    @property
    def range_bin_size(self) -> float:
        return C * self.sample_rate / (2 * self.slope_rate * self.samples_per_chirp)

    @property
    def max_velocity(self) -> float:
        return self.wavelength / (4 * self.chirp_duration)

    def beat_frequency(self, r):
        return 2 * self.slope_rate * np.asarray(r) / C

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Scatterer:
    range: float
    azimuth: float
    reflectivity: float = 1.0
    radial_velocity: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.reflectivity < 0:
            raise ValueError("reflectivity must be non-negative")


@dataclass
class Scene:
    scatterers: list[Scatterer] = field(default_factory=list)
    extent: tuple[float, float] = (DEFAULT_RANGE_EXTENT, DEFAULT_FOV)
    seed: int = 0
    kind: str = "custom"

    def arrays(self) -> dict[str, np.ndarray]:
        names = ("range", "azimuth", "reflectivity", "radial_velocity", "phase")
        return {n: np.array([getattr(s, n) for s in self.scatterers], dtype=np.float64) for n in names}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": int(self.seed),
            "extent": {"r_max": float(self.extent[0]), "fov": float(self.extent[1])},
            "scatterers": [asdict(s) for s in self.scatterers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        ext = d["extent"]
        return cls(
            scatterers=[Scatterer(**s) for s in d["scatterers"]],
            extent=(float(ext["r_max"]), float(ext["fov"])),
            seed=int(d["seed"]),
            kind=d.get("kind", "custom"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RadarCube:
    """Complex IF samples indexed ``[chirp, sample, virtual antenna]``."""

    data: np.ndarray
    meta: WaveformConfig

    def __post_init__(self):
        expected = (self.meta.chirps_per_frame, self.meta.samples_per_chirp, self.meta.n_virtual)
        if self.data.shape != expected:
            raise ValueError(f"cube shape {self.data.shape} does not match config {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("radar cube contains non-finite values")


# --- scene generation -------------------------------------------------------


def _segment(p0, p1, spacing, rng, jitter=0.01):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(int(np.ceil(np.linalg.norm(p1 - p0) / spacing)), 1)
    t = (np.arange(n) + rng.uniform(0, 1)) / n
    pts = p0 + t[:, None] * (p1 - p0)
    return pts + rng.normal(0, jitter, pts.shape)


def _corridor(rng, r_max):
    width = rng.uniform(2.0, 4.0)
    offset = rng.uniform(-0.5, 0.5)
    yaw = np.deg2rad(rng.uniform(-12, 12))
    start = rng.uniform(0.3, 1.5)
    length = r_max + 2.0
    rot = np.array([[np.cos(yaw), -np.sin(yaw)], [np.sin(yaw), np.cos(yaw)]])
    walls = []
    for side in (-0.5, 0.5):
        y = offset + side * width
        walls.append(_segment((start, y), (start + length, y), 0.08, rng))
    if rng.uniform() < 0.5:
        end = rng.uniform(5.0, r_max - 0.5)
        walls.append(_segment((end, offset - width / 2), (end, offset + width / 2), 0.08, rng))
    return np.concatenate(walls) @ rot.T


def _random_boxes(rng, r_max):
    pts = []
    for _ in range(rng.integers(2, 6)):
        r = rng.uniform(2.0, r_max - 1.5)
        th = rng.uniform(-0.8, 0.8)
        cx, cy = r * np.cos(th), r * np.sin(th)
        hw, hh = rng.uniform(0.25, 1.0, size=2)
        ang = rng.uniform(0, np.pi)
        corners = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        corners = corners @ rot.T + (cx, cy)
        for k in range(4):
            pts.append(_segment(corners[k], corners[(k + 1) % 4], 0.08, rng))
    return np.concatenate(pts)


def _rock_wall(rng, r_max, fov):
    pts = []
    for _ in range(rng.integers(1, 3)):
        radius = rng.uniform(4.0, r_max - 1.0)
        th0, th1 = np.sort(rng.uniform(-fov / 2, fov / 2, size=2))
        if th1 - th0 < 0.3:
            th1 = min(th0 + 0.3, fov / 2)
        n = max(int((th1 - th0) * radius / 0.08), 2)
        th = np.linspace(th0, th1, n)
        # smooth radial roughness from a few random harmonics
        rough = sum(
            rng.normal(0, 0.25 / (k + 1)) * np.sin((k + 1) * 4 * th + rng.uniform(0, 2 * np.pi))
            for k in range(4)
        )
        r = radius + rough + rng.normal(0, 0.03, n)
        pts.append(np.stack([r * np.cos(th), r * np.sin(th)], axis=-1))
    return np.concatenate(pts)


def generate_scene(
    kind: str,
    seed: int,
    extent: tuple[float, float] = (DEFAULT_RANGE_EXTENT, DEFAULT_FOV),
    n_clutter: int = 6,
) -> Scene:
    """Sample a toy indoor/mine-like scene.

    Structure points get reflectivity around 1, isolated clutter points
    around 0.2.  Scatterer phases are uniform so that neighbouring points
    on a wall do not add coherently.  Only scatterers inside ``extent``
    (and beyond 0.2 m) are kept.
    """
    r_max, fov = extent
    if r_max <= 0 or fov <= 0:
        raise ConfigurationError("extent must be positive")
    if kind not in SCENE_KINDS:
        raise ConfigurationError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    rng = np.random.default_rng([SCENE_KINDS.index(kind), int(seed)])
    if kind == "corridor":
        xy = _corridor(rng, r_max)
    elif kind == "random_boxes":
        xy = _random_boxes(rng, r_max)
    else:
        xy = _rock_wall(rng, r_max, fov)
    refl = rng.uniform(0.7, 1.0, len(xy))
    clutter_r = rng.uniform(1.0, r_max, n_clutter)
    clutter_th = rng.uniform(-fov / 2, fov / 2, n_clutter)
    xy = np.concatenate([xy, np.stack([clutter_r * np.cos(clutter_th), clutter_r * np.sin(clutter_th)], -1)])
    refl = np.concatenate([refl, rng.uniform(0.1, 0.3, n_clutter)])
    phase = rng.uniform(0, 2 * np.pi, len(xy))

    r = np.hypot(xy[:, 0], xy[:, 1])
    th = np.arctan2(xy[:, 1], xy[:, 0])
    keep = (r > 0.2) & (r < r_max) & (np.abs(th) < fov / 2)
    scatterers = [
        Scatterer(float(a), float(b), float(c), 0.0, float(d))
        for a, b, c, d in zip(r[keep], th[keep], refl[keep], phase[keep])
    ]
    return Scene(scatterers, (float(r_max), float(fov)), int(seed), kind)


# --- IF signal ---------------------------------------------------------------


def check_scene(scene: Scene, cfg: WaveformConfig) -> None:
    a = scene.arrays()
    if len(scene.scatterers) == 0:
        return
    bad_r = (a["range"] <= 0) | (a["range"] >= cfg.max_range)
    bad_v = np.abs(a["radial_velocity"]) >= cfg.max_velocity
    bad_th = np.abs(a["azimuth"]) >= np.pi / 2
    if np.any(bad_r | bad_v | bad_th):
        i = int(np.flatnonzero(bad_r | bad_v | bad_th)[0])
        s = scene.scatterers[i]
        raise RangeViolationError(
            f"scatterer {i} (r={s.range:.3f} m, v={s.radial_velocity:.3f} m/s, theta={s.azimuth:.3f} rad) "
            f"outside unambiguous limits r<{cfg.max_range:.3f} m, |v|<{cfg.max_velocity:.3f} m/s"
        )


def simulate_frame(
    scene: Scene,
    cfg: WaveformConfig,
    noise_std: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> RadarCube:
    """Simulate one frame of complex IF samples for ``scene``.

    The noise is circular complex Gaussian with total standard deviation
    ``noise_std`` per sample (``noise_std/sqrt(2)`` per quadrature).
    ``rng`` defaults to a generator seeded from ``scene.seed``.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    check_scene(scene, cfg)
    shape = (cfg.chirps_per_frame, cfg.samples_per_chirp, cfg.n_virtual)
    cube = np.zeros(shape, dtype=np.complex128)
    if scene.scatterers:
        a = scene.arrays()
        t = np.arange(cfg.samples_per_chirp) / cfg.sample_rate
        f = cfg.beat_frequency(a["range"])
        dphi_v = 4 * np.pi * a["radial_velocity"] * cfg.chirp_duration / cfg.wavelength
        dphi_a = 2 * np.pi * cfg.antenna_spacing * np.sin(a["azimuth"]) / cfg.wavelength
        amp = a["reflectivity"] * np.exp(1j * a["phase"])
        fast = np.exp(2j * np.pi * f[:, None] * t[None, :])  # [K, Ns]
        slow = np.exp(1j * dphi_v[:, None] * np.arange(cfg.chirps_per_frame)[None, :])  # [K, Nc]
        ant = np.exp(1j * dphi_a[:, None] * np.arange(cfg.n_virtual)[None, :])  # [K, Nv]
        slow_ant = (amp[:, None, None] * slow[:, :, None] * ant[:, None, :]).reshape(len(f), -1)
        cube = (slow_ant.T @ fast).reshape(
            cfg.chirps_per_frame, cfg.n_virtual, cfg.samples_per_chirp
        ).transpose(0, 2, 1)
        cube = np.ascontiguousarray(cube)
    if noise_std > 0:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng([int(scene.seed), 7919] if rng is None else rng)
        cube = cube + (noise_std / np.sqrt(2)) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return RadarCube(cube, cfg)


def ground_truth_points(scene: Scene) -> PointCloud2D:
    """LiDAR-like truth: Cartesian positions of in-FOV scatterers."""
    a = scene.arrays()
    cloud = PointCloud2D.from_polar(a["range"], a["azimuth"], frame_id=scene.seed)
    r_max, fov = scene.extent
    return fov_filter(cloud, fov=fov, range_extent=r_max)
