"""Point clouds, polar BEV occupancy images and conversions between them.

BEV images live on a polar grid: rows are range cells of size
``range_extent / H`` starting at the sensor, columns are azimuth cells of
size ``fov / W`` spanning ``[-fov/2, fov/2]``.  Radar heatmaps resampled
with :func:`radardiff.radar_dsp.rah_to_polar_grid` share this grid, which
is what makes channel concatenation of condition and sample meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError

DEFAULT_RANGE_EXTENT = 12.8
DEFAULT_FOV = np.deg2rad(120.0)


@dataclass
class PointCloud2D:
    """Cartesian 2D points in metres (x forward, y left)."""

    points: np.ndarray
    frame_id: int = 0
    magnitude: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        if self.magnitude is not None:
            mag = np.asarray(self.magnitude, dtype=np.float64).reshape(-1)
            if mag.shape[0] != pts.shape[0]:
                raise ShapeMismatchError("magnitude length does not match point count")
            self.magnitude = mag

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def ranges(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])

    @property
    def azimuths(self) -> np.ndarray:
        return np.arctan2(self.points[:, 1], self.points[:, 0])

    @classmethod
    def from_polar(cls, r, theta, frame_id: int = 0, magnitude=None) -> "PointCloud2D":
        r = np.asarray(r, dtype=np.float64)
        theta = np.asarray(theta, dtype=np.float64)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
        return cls(pts, frame_id=frame_id, magnitude=magnitude)


@dataclass
class BevImage:
    """Polar occupancy image with values in [0, 1]."""

    values: np.ndarray
    range_extent: float = DEFAULT_RANGE_EXTENT
    fov: float = DEFAULT_FOV
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatchError(f"BEV image must be 2D, got shape {self.values.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def range_cell(self) -> float:
        return self.range_extent / self.values.shape[0]

    @property
    def azimuth_cell(self) -> float:
        return self.fov / self.values.shape[1]

    def row_centers(self) -> np.ndarray:
        return (np.arange(self.values.shape[0]) + 0.5) * self.range_cell

    def col_centers(self) -> np.ndarray:
        return -self.fov / 2 + (np.arange(self.values.shape[1]) + 0.5) * self.azimuth_cell


def polar_cells(r, theta, H: int, W: int, range_extent: float, fov: float):
    """Map polar coordinates to (row, col) cell indices.

    Returns ``(rows, cols, inside)``; indices are only meaningful where
    ``inside`` is true.  Bounds are closed so they agree with
    :func:`fov_filter`.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    inside = (r <= range_extent) & (np.abs(theta) <= fov / 2)
    rows = np.minimum(np.floor(r / (range_extent / H)), H - 1).astype(np.int64)
    cols = np.floor((theta + fov / 2) / (fov / W))
    cols = np.clip(cols, 0, W - 1).astype(np.int64)
    return rows, cols, inside


def rasterize(
    cloud: PointCloud2D,
    H: int = 128,
    W: int = 128,
    range_extent: float = DEFAULT_RANGE_EXTENT,
    fov: float = DEFAULT_FOV,
) -> BevImage:
    """Binary occupancy rasterization of a point cloud onto the polar grid."""
    if range_extent <= 0 or fov <= 0:
        raise ValueError("range_extent and fov must be positive")
    img = np.zeros((H, W))
    rows, cols, inside = polar_cells(cloud.ranges, cloud.azimuths, H, W, range_extent, fov)
    img[rows[inside], cols[inside]] = 1.0
    return BevImage(img, range_extent, fov, dropped=int(np.count_nonzero(~inside)))


def extract_points(img: BevImage, threshold: float = 0.5, frame_id: int = 0) -> PointCloud2D:
    """Turn cells with ``value >= threshold`` into points at cell centres."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    rows, cols = np.nonzero(img.values >= threshold)
    r = img.row_centers()[rows]
    theta = img.col_centers()[cols]
    return PointCloud2D.from_polar(r, theta, frame_id=frame_id, magnitude=img.values[rows, cols])


def fov_filter(
    cloud: PointCloud2D, fov: float = DEFAULT_FOV, range_extent: float = DEFAULT_RANGE_EXTENT
) -> PointCloud2D:
    """Keep points with ``|azimuth| <= fov/2`` and ``range <= range_extent``."""
    keep = (np.abs(cloud.azimuths) <= fov / 2) & (cloud.ranges <= range_extent)
    mag = None if cloud.magnitude is None else cloud.magnitude[keep]
    return PointCloud2D(cloud.points[keep], frame_id=cloud.frame_id, magnitude=mag)


def average_predictions(images: Sequence[BevImage]) -> BevImage:
    """Elementwise mean of several predicted BEV images of identical shape."""
    if len(images) == 0:
        raise ValueError("need at least one image")
    shape = images[0].shape
    for im in images[1:]:
        if im.shape != shape:
            raise ShapeMismatchError(f"shape {im.shape} does not match {shape}")
    stacked = np.stack([im.values for im in images])
    first = images[0]
    return BevImage(stacked.mean(axis=0), first.range_extent, first.fov)
