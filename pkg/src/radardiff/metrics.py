"""Point-set quality metrics: Chamfer, Hausdorff, F-Score and CD CDF curves.

Distances are Euclidean in metres.  Nearest neighbours come from a
KD-tree; the distance to the chosen neighbour is then recomputed with the
same expression the brute-force reference uses, so both paths agree
bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError
from .geometry import PointCloud2D

FSCORE_THRESHOLD = 0.1


def _as_points(p) -> np.ndarray:
    pts = p.points if isinstance(p, PointCloud2D) else np.asarray(p, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyCloudError("metric undefined for an empty point set")
    return pts


def _dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])


def nn_distances(a, b) -> np.ndarray:
    """For each point of ``a``, distance to its nearest neighbour in ``b``."""
    a, b = _as_points(a), _as_points(b)
    tree = cKDTree(b)
    d, idx = tree.query(a, k=1)
    out = _dist(a, b[idx])
    # The tree's own arithmetic can break near-ties differently from _dist, so
    # rescore every candidate within a hair of the tree distance.
    near = tree.query_ball_point(a, d * (1 + 1e-9) + 1e-12, return_sorted=False)
    for i, cand in enumerate(near):
        if len(cand) > 1:
            out[i] = _dist(a[i], b[cand]).min()
    return out


def nn_distances_brute(a, b) -> np.ndarray:
    """O(n*m) reference for :func:`nn_distances`."""
    a, b = _as_points(a), _as_points(b)
    return _dist(a[:, None, :], b[None, :, :]).min(axis=1)


def chamfer(p_gt, g_rd, nn=nn_distances) -> float:
    return float(nn(p_gt, g_rd).mean() + nn(g_rd, p_gt).mean())


def directed_hausdorff(a, b, nn=nn_distances) -> float:
    return float(nn(a, b).max())


def hausdorff(p_gt, g_rd, nn=nn_distances) -> float:
    return max(directed_hausdorff(p_gt, g_rd, nn), directed_hausdorff(g_rd, p_gt, nn))


def fscore(p_gt, g_rd, d: float = FSCORE_THRESHOLD, nn=nn_distances) -> float:
    """Harmonic mean of precision (prediction near truth) and recall (truth near prediction)."""
    if d <= 0:
        raise ValueError("distance threshold must be positive")
    precision = float(np.mean(nn(g_rd, p_gt) <= d))
    recall = float(np.mean(nn(p_gt, g_rd) <= d))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def cdf_curve(values) -> list[tuple[float, float]]:
    """Empirical CDF: sorted values paired with ``i/n`` for ``i = 1..n``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("cdf of an empty list")
    n = v.size
    return [(float(x), (i + 1) / n) for i, x in enumerate(v)]


@dataclass
class FrameMetrics:
    frame_id: int
    cd: float
    hd: float
    fscore: float
    scene: str = ""
    missing: bool = False


def evaluate_frame(p_gt: PointCloud2D, g_rd: PointCloud2D, d: float = FSCORE_THRESHOLD, scene: str = "") -> FrameMetrics:
    """Metrics for one frame.  An empty prediction is flagged ``missing``: CD/HD are NaN, F-Score 0."""
    fid = p_gt.frame_id
    if len(g_rd) == 0:
        return FrameMetrics(fid, float("nan"), float("nan"), 0.0, scene, missing=True)
    return FrameMetrics(fid, chamfer(p_gt, g_rd), hausdorff(p_gt, g_rd), fscore(p_gt, g_rd, d), scene)


@dataclass
class MetricsReport:
    method: str
    frames: list[FrameMetrics] = field(default_factory=list)

    def valid(self, scene: str | None = None) -> list[FrameMetrics]:
        return [f for f in self.frames if not f.missing and (scene is None or f.scene == scene)]

    def aggregate(self, scene: str | None = None) -> dict:
        rows = [f for f in self.frames if scene is None or f.scene == scene]
        ok = [f for f in rows if not f.missing]
        return {
            "cd": float(np.mean([f.cd for f in ok])) if ok else float("nan"),
            "hd": float(np.mean([f.hd for f in ok])) if ok else float("nan"),
            "fscore": float(np.mean([f.fscore for f in rows])) if rows else float("nan"),
            "n_frames": len(rows),
            "n_missing": len(rows) - len(ok),
        }

    def scenes(self) -> list[str]:
        return sorted({f.scene for f in self.frames})

    def cdf(self, scene: str | None = None):
        return cdf_curve([f.cd for f in self.valid(scene)])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_id", "scene", "cd", "hd", "fscore", "missing"])
            for f in self.frames:
                w.writerow([f.frame_id, f.scene, repr(f.cd), repr(f.hd), repr(f.fscore), int(f.missing)])

    def write_cdf_csv(self, path, scene: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cd", "cumulative_fraction"])
            for v, q in self.cdf(scene):
                w.writerow([repr(v), repr(q)])

    @classmethod
    def read_csv(cls, path, method: str = "") -> "MetricsReport":
        rep = cls(method)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.frames.append(
                    FrameMetrics(
                        int(row["frame_id"]), float(row["cd"]), float(row["hd"]), float(row["fscore"]),
                        row["scene"], bool(int(row["missing"])),
                    )
                )
        return rep


def write_table(reports: list[MetricsReport], path) -> str:
    """Aggregate table, one row per method and CD/HD/F-Score columns per scene kind."""
    scenes = sorted({s for r in reports for s in r.scenes()})
    header = ["method"] + [f"{s}_{m}" for s in scenes for m in ("cd", "hd", "fscore")] + ["n_missing"]
    lines = [",".join(header)]
    for rep in reports:
        cells = [rep.method]
        for s in scenes:
            agg = rep.aggregate(s)
            cells += [f"{agg['cd']:.4f}", f"{agg['hd']:.4f}", f"{agg['fscore']:.4f}"]
        cells.append(str(rep.aggregate()["n_missing"]))
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text)
    return text
