"""Radar range-azimuth heatmaps to LiDAR-like bird's-eye-view point clouds.

Modules, bottom-up:

``signal_sim``
    FMCW waveform, synthetic scenes and raw ADC cubes.
``radar_dsp``
    Range/Doppler/angle FFTs and heatmap construction.
``detectors``
    CA- and OS-CFAR baselines.
``geometry``
    Point clouds, polar BEV rasterisation and point extraction.
``diffusion`` / ``denoisers``
    Noise schedule, Heun sampler and the conditional EDM denoiser.
``consistency``
    Consistency distillation and one/multi-step generation.
``metrics``
    Chamfer, Hausdorff and F-score with reports.
``bench`` / ``cli``
    Experiment driver and command line.
"""

from .consistency import ConsistencyModel, DistillConfig, multistep_generate, one_step_generate
from .denoisers import AnalyticGaussianDenoiser, EDMDenoiser, TinyUNet, UNetConfig
from .detectors import CfarConfig, cfar_2d
from .diffusion import NoiseSchedule, heun_sample, karras_sigmas
from .errors import (
    ConfigurationError,
    DomainError,
    EmptyCloudError,
    FormatError,
    NumericError,
    RadarDiffError,
    RangeViolationError,
    ShapeMismatchError,
)
from .geometry import BevImage, PointCloud2D, extract_points, rasterize
from .metrics import chamfer, evaluate_frame, fscore, hausdorff
from .radar_dsp import RangeAzimuthHeatmap, make_rah, make_rdh
from .signal_sim import RadarCube, Scatterer, Scene, WaveformConfig, generate_scene, simulate_frame

__version__ = "0.1.0"

__all__ = [
    "AnalyticGaussianDenoiser", "BevImage", "CfarConfig", "ConfigurationError", "ConsistencyModel",
    "DistillConfig", "DomainError", "EDMDenoiser", "EmptyCloudError", "FormatError", "NoiseSchedule",
    "NumericError", "PointCloud2D", "RadarCube", "RadarDiffError", "RangeAzimuthHeatmap",
    "RangeViolationError", "Scatterer", "Scene", "ShapeMismatchError", "TinyUNet", "UNetConfig",
    "WaveformConfig", "cfar_2d", "chamfer", "evaluate_frame", "extract_points", "fscore",
    "generate_scene", "hausdorff", "heun_sample", "karras_sigmas", "make_rah", "make_rdh",
    "multistep_generate", "one_step_generate", "rasterize", "simulate_frame",
]
