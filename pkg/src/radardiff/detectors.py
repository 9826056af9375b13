"""Cell-averaging and ordered-statistic CFAR on 2D heatmaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError
from .geometry import PointCloud2D
from .radar_dsp import RangeAzimuthHeatmap


def ca_alpha(pfa: float, n_train: int) -> float:
    """CA-CFAR scale factor for exponential (square-law) noise."""
    return n_train * (pfa ** (-1.0 / n_train) - 1.0)


def ca_pfa(alpha: float, n_train: int) -> float:
    return (1.0 + alpha / n_train) ** (-n_train)


def os_pfa(alpha: float, n_train: int, k: int) -> float:
    """False-alarm probability of OS-CFAR with the k-th smallest training cell."""
    i = np.arange(k)
    return float(np.prod((n_train - i) / (n_train - i + alpha)))


def os_alpha(pfa: float, n_train: int, k: int) -> float:
    return brentq(lambda a: np.log(os_pfa(a, n_train, k)) - np.log(pfa), 1e-9, 1e9, xtol=1e-12)


@dataclass
class CfarConfig:
    """CFAR window and threshold settings.

    ``train_cells`` and ``guard_cells`` are per side per axis of a
    cross-shaped window, so there are ``4 * train_cells`` training cells.
    ``os_rank`` defaults to three quarters of them and ``scale_factor`` to
    the value giving ``pfa`` on exponentially distributed noise.
    """

    variant: str = "OS"
    train_cells: int = 8
    guard_cells: int = 2
    os_rank: int | None = None
    scale_factor: float | None = None
    pfa: float = 1e-3

    def __post_init__(self):
        if self.variant not in ("CA", "OS"):
            raise ConfigurationError(f"unknown CFAR variant {self.variant!r}")
        if self.train_cells < 1 or self.guard_cells < 0:
            raise ConfigurationError("train_cells must be >= 1 and guard_cells >= 0")
        if self.os_rank is None:
            self.os_rank = max(1, (3 * self.n_train) // 4)
        if not 1 <= self.os_rank <= self.n_train:
            raise ConfigurationError(f"os_rank must lie in [1, {self.n_train}]")
        if self.scale_factor is None:
            if self.variant == "CA":
                self.scale_factor = ca_alpha(self.pfa, self.n_train)
            else:
                self.scale_factor = os_alpha(self.pfa, self.n_train, self.os_rank)
        if not self.scale_factor > 0:
            raise ConfigurationError("scale_factor must be positive")

    @property
    def n_train(self) -> int:
        return 4 * self.train_cells

    @property
    def half_window(self) -> int:
        return self.train_cells + self.guard_cells


@dataclass(frozen=True)
class Detection:
    range_bin: int
    azimuth_bin: int
    magnitude: float
    snr_estimate: float


def noise_estimate(values: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """Noise level for every interior cell where the window fits.

    Returns an array of shape ``(H - 2w, W - 2w)`` with ``w = cfg.half_window``.
    """
    x = np.asarray(values, dtype=np.float64)
    H, W = x.shape
    w = cfg.half_window
    if H <= 2 * w or W <= 2 * w:
        raise ConfigurationError(f"heatmap {x.shape} too small for a CFAR window of half-width {w}")
    offsets = np.arange(cfg.guard_cells + 1, w + 1)
    cells = []
    for o in np.concatenate([-offsets, offsets]):
        cells.append(x[w + o : H - w + o, w : W - w])
        cells.append(x[w : H - w, w + o : W - w + o])
    ring = np.stack(cells)
    if cfg.variant == "CA":
        return ring.mean(axis=0)
    k = cfg.os_rank - 1
    return np.partition(ring, k, axis=0)[k]


def cfar_2d(heatmap, cfg: CfarConfig) -> list[Detection]:
    """Detect cells whose value exceeds ``scale_factor`` times the local noise.

    Border cells where the window does not fit are skipped.  Where the noise
    estimate is exactly zero the rule reduces to ``value > 0``.
    """
    x = np.asarray(heatmap.values if isinstance(heatmap, RangeAzimuthHeatmap) else heatmap, dtype=np.float64)
    noise = noise_estimate(x, cfg)
    w = cfg.half_window
    cut = x[w : x.shape[0] - w, w : x.shape[1] - w]
    hit = cut > cfg.scale_factor * noise
    rows, cols = np.nonzero(hit)
    out = []
    for i, j in zip(rows, cols):
        n = noise[i, j]
        snr = cut[i, j] / n if n > 0 else np.inf
        out.append(Detection(int(i + w), int(j + w), float(cut[i, j]), float(snr)))
    return out


def detection_mask(heatmap, cfg: CfarConfig) -> np.ndarray:
    """Boolean image of detections, same shape as the heatmap."""
    x = np.asarray(heatmap.values if isinstance(heatmap, RangeAzimuthHeatmap) else heatmap)
    mask = np.zeros(x.shape, dtype=bool)
    for d in cfar_2d(x, cfg):
        mask[d.range_bin, d.azimuth_bin] = True
    return mask


def detections_to_points(detections, heatmap: RangeAzimuthHeatmap, frame_id: int | None = None) -> PointCloud2D:
    """Place detections at their range/azimuth bin centres in Cartesian space."""
    fid = heatmap.frame_id if frame_id is None else frame_id
    if not detections:
        return PointCloud2D(np.zeros((0, 2)), frame_id=fid, magnitude=np.zeros(0))
    rb = np.array([d.range_bin for d in detections])
    ab = np.array([d.azimuth_bin for d in detections])
    mag = np.array([d.magnitude for d in detections])
    r = rb * heatmap.range_bin_size
    theta = heatmap.azimuth_bins[ab]
    ok = np.isfinite(theta)
    return PointCloud2D.from_polar(r[ok], theta[ok], frame_id=fid, magnitude=mag[ok])
