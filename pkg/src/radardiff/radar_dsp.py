"""FFT processing chain: range, Doppler and angle spectra plus heatmaps.

Axis convention throughout is ``[chirp, range, antenna]`` for complex
spectra, matching :class:`radardiff.signal_sim.RadarCube`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, NumericError
from .signal_sim import RadarCube, WaveformConfig

EPS_MAG = 1e-12


@dataclass
class RangeAzimuthHeatmap:
    """Per-frame normalised range-azimuth image, rows = range bins."""

    values: np.ndarray
    range_bin_size: float
    azimuth_bins: np.ndarray
    frame_id: int = 0
    scale: str = "db"
    spacing_ratio: float = 0.5  # antenna spacing / wavelength
    norm: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_angle_bins(self) -> int:
        return self.values.shape[1]

    def range_centers(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.range_bin_size


@dataclass
class RangeDopplerHeatmap:
    """Non-coherently integrated range-Doppler magnitude, shape ``[range, doppler]``."""

    values: np.ndarray
    range_bin_size: float
    velocity_bins: np.ndarray
    frame_id: int = 0


def _data(cube) -> np.ndarray:
    data = cube.data if isinstance(cube, RadarCube) else np.asarray(cube)
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite values in FFT input")
    return data


def range_fft(cube, window: str = "hann") -> np.ndarray:
    """FFT over fast-time samples, keeping the first ``N_s/2`` bins.

    Bin ``b`` corresponds to range ``b * C * f_s / (2 * S * N_s)``.
    """
    data = _data(cube)
    n_s = data.shape[1]
    if n_s < 2:
        raise ConfigurationError("need at least 2 samples per chirp")
    if window == "hann":
        data = data * np.hanning(n_s)[None, :, None]
    elif window != "rect":
        raise ConfigurationError(f"unknown window {window!r}")
    return np.fft.fft(data, axis=1)[:, : n_s // 2, :]


def doppler_fft(range_spectrum) -> np.ndarray:
    """FFT over chirps, shifted so zero velocity sits at bin ``N_chirp // 2``."""
    x = _data(range_spectrum)
    if x.shape[0] < 2:
        raise ConfigurationError("need at least 2 chirps for a Doppler FFT")
    return np.fft.fftshift(np.fft.fft(x, axis=0), axes=0)


def angle_fft(range_spectrum, n_angle_bins: int = 64) -> np.ndarray:
    """Zero-padded, shifted FFT over the virtual antenna axis (last axis)."""
    x = _data(range_spectrum)
    n_virt = x.shape[-1]
    if n_angle_bins < n_virt:
        raise ConfigurationError(f"n_angle_bins={n_angle_bins} smaller than {n_virt} virtual antennas")
    if n_angle_bins & (n_angle_bins - 1):
        raise ConfigurationError("n_angle_bins must be a power of two")
    return np.fft.fftshift(np.fft.fft(x, n=n_angle_bins, axis=-1), axes=-1)


# --- bin <-> physical conversions --------------------------------------------


def range_bins(cfg: WaveformConfig) -> np.ndarray:
    return np.arange(cfg.samples_per_chirp // 2) * cfg.range_bin_size


def velocity_bins(cfg: WaveformConfig) -> np.ndarray:
    n = cfg.chirps_per_frame
    dphi = 2 * np.pi * (np.arange(n) - n // 2) / n
    return cfg.wavelength * dphi / (4 * np.pi * cfg.chirp_duration)


def angle_bins(n_angle_bins: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """Angle centres of shifted angle-FFT bins; NaN where the bin is not a real angle."""
    k = np.arange(n_angle_bins) - n_angle_bins // 2
    s = k / n_angle_bins / spacing_ratio
    with np.errstate(invalid="ignore"):
        return np.where(np.abs(s) <= 1, np.arcsin(np.clip(s, -1, 1)), np.nan)


def angle_to_bin(theta, n_angle_bins: int, spacing_ratio: float = 0.5):
    """Fractional angle-bin index of ``theta``."""
    return n_angle_bins // 2 + n_angle_bins * spacing_ratio * np.sin(theta)


def azimuth_resolution(n_virtual: int, spacing_ratio: float = 0.5, theta: float = 0.0) -> float:
    """Angular resolution ``lambda / (N * l * cos(theta))`` in radians."""
    return 1.0 / (n_virtual * spacing_ratio * np.cos(theta))


# --- heatmaps ------------------------------------------------------------------


def _normalize_db(power: np.ndarray):
    db = 20 * np.log10(np.sqrt(power) + EPS_MAG)
    lo, hi = float(db.min()), float(db.max())
    if hi == lo:
        return np.zeros_like(db), {"db_min": lo, "db_max": hi}
    return (db - lo) / (hi - lo), {"db_min": lo, "db_max": hi}


def make_rah(
    cube: RadarCube,
    n_angle_bins: int = 64,
    doppler_integration: str = "sum_power",
    window: str = "hann",
    scale: str = "db",
    frame_id: int = 0,
) -> RangeAzimuthHeatmap:
    """Range-azimuth heatmap normalised to [0, 1].

    ``scale="db"`` (the diffusion condition) applies ``20*log10`` to the
    magnitude followed by per-frame min-max normalisation.  ``scale="power"``
    keeps linear power divided by its maximum, which preserves the ratio
    statistics CFAR relies on.
    """
    cfg = cube.meta
    spec = angle_fft(range_fft(cube, window), n_angle_bins)
    if doppler_integration == "sum_power":
        power = (np.abs(doppler_fft(spec)) ** 2).sum(axis=0)
    elif doppler_integration == "zero_doppler":
        power = np.abs(doppler_fft(spec)[cfg.chirps_per_frame // 2]) ** 2
    else:
        raise ConfigurationError(f"unknown doppler_integration {doppler_integration!r}")

    if scale == "db":
        values, norm = _normalize_db(power)
    elif scale == "power":
        peak = float(power.max())
        values = power / peak if peak > 0 else np.zeros_like(power)
        norm = {"power_max": peak}
    else:
        raise ConfigurationError(f"unknown scale {scale!r}")
    ratio = cfg.antenna_spacing / cfg.wavelength
    return RangeAzimuthHeatmap(
        values=values,
        range_bin_size=cfg.range_bin_size,
        azimuth_bins=angle_bins(n_angle_bins, ratio),
        frame_id=frame_id,
        scale=scale,
        spacing_ratio=ratio,
        norm=norm | {"doppler_integration": doppler_integration, "window": window},
    )


def make_rdh(cube: RadarCube, window: str = "hann", frame_id: int = 0) -> RangeDopplerHeatmap:
    """Range-Doppler magnitude, integrated non-coherently over antennas."""
    spec = doppler_fft(range_fft(cube, window))
    mag = np.sqrt((np.abs(spec) ** 2).sum(axis=-1)).T
    return RangeDopplerHeatmap(mag, cube.meta.range_bin_size, velocity_bins(cube.meta), frame_id)


def rah_to_polar_grid(
    rah: RangeAzimuthHeatmap, H: int, W: int, range_extent: float, fov: float
) -> np.ndarray:
    """Bilinearly resample a heatmap onto the BEV polar cell centres.

    Output is pixel-aligned with :func:`radardiff.geometry.rasterize` for the
    same ``(H, W, range_extent, fov)``.
    """
    r = (np.arange(H) + 0.5) * range_extent / H
    theta = -fov / 2 + (np.arange(W) + 0.5) * fov / W
    ri = r / rah.range_bin_size
    ai = angle_to_bin(theta, rah.n_angle_bins, rah.spacing_ratio)
    coords = np.stack(np.meshgrid(ri, ai, indexing="ij"))
    out = ndimage.map_coordinates(rah.values, coords, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def estimate_peak(cube: RadarCube, n_angle_bins: int = 64) -> tuple[float, float, float]:
    """``(range, sin(azimuth), velocity)`` at the global maximum of the 3D spectrum.

    The angle is reported as ``sin(theta)`` since angle bins are uniform in
    that variable.
    """
    cfg = cube.meta
    spec = np.abs(angle_fft(doppler_fft(range_fft(cube, "rect")), n_angle_bins))
    d, r, a = np.unravel_index(np.argmax(spec), spec.shape)
    ratio = cfg.antenna_spacing / cfg.wavelength
    sin_theta = (a - n_angle_bins // 2) / n_angle_bins / ratio
    return float(range_bins(cfg)[r]), float(sin_theta), float(velocity_bins(cfg)[d])
