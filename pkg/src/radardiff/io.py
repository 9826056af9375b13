"""On-disk formats.

Tensor files (radar cubes ``RDC1``, heatmaps ``RAH1``/``RDH1``, BEV images
``BEV1``, point clouds ``PCL1``), all little-endian::

    magic      4 bytes ASCII
    ndim       uint32
    dims       ndim x uint32
    data       float32, C order; complex tensors store interleaved re/im

Metadata travels in a JSON sidecar ``<file>.json``.

Checkpoints (``CKPT``)::

    magic      b"CKPT"
    version    uint32 (1)
    hlen       uint32, length of the JSON header in bytes
    header     UTF-8 JSON: training state (kind, seed, step, schedule_hash,
               model config, ...) and a ``tensors`` list of
               {name, shape, offset, nbytes}
    payload    concatenated float32 tensors, offsets relative to payload start
"""

from __future__ import annotations

import csv
import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import PointCloud2D

TENSOR_MAGICS = {b"RDC1", b"RAH1", b"RDH1", b"BEV1", b"PCL1"}
COMPLEX_MAGICS = {b"RDC1"}


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_tensor(path, array, magic: bytes, meta: dict | None = None) -> None:
    if magic not in TENSOR_MAGICS:
        raise FormatError(f"unknown magic {magic!r}")
    a = np.asarray(array)
    if magic in COMPLEX_MAGICS:
        body = np.stack([a.real, a.imag], axis=-1).astype("<f4")
    else:
        body = a.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(body).tobytes())
    if meta is not None:
        _sidecar(path).write_text(json.dumps(meta, indent=1, default=_json_default))


def read_tensor(path, expect: bytes | None = None):
    """Return ``(array, magic, meta)``; ``meta`` is ``{}`` without a sidecar."""
    raw = Path(path).read_bytes()
    magic = raw[:4]
    if magic not in TENSOR_MAGICS or (expect is not None and magic != expect):
        raise FormatError(f"{path}: unexpected magic {magic!r}")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    data = np.frombuffer(raw, dtype="<f4", offset=8 + 4 * ndim)
    if magic in COMPLEX_MAGICS:
        data = data.reshape(*dims, 2)
        arr = data[..., 0].astype(np.complex64) + 1j * data[..., 1]
    else:
        arr = data.reshape(dims).copy()
    side = _sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return arr, magic, meta


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


# --- domain objects -------------------------------------------------------------


def save_cube(path, cube) -> None:
    write_tensor(path, cube.data, b"RDC1", {"waveform": cube.meta.to_dict()})


def load_cube(path):
    from .signal_sim import RadarCube, WaveformConfig

    data, _, meta = read_tensor(path, b"RDC1")
    return RadarCube(data.astype(np.complex128), WaveformConfig(**meta["waveform"]))


def save_rah(path, rah) -> None:
    meta = {
        "range_bin_size": rah.range_bin_size,
        "azimuth_bins": rah.azimuth_bins,
        "frame_id": rah.frame_id,
        "scale": rah.scale,
        "spacing_ratio": rah.spacing_ratio,
        "normalization": rah.norm,
    }
    write_tensor(path, rah.values, b"RAH1", meta)


def load_rah(path):
    from .radar_dsp import RangeAzimuthHeatmap

    values, _, m = read_tensor(path, b"RAH1")
    return RangeAzimuthHeatmap(
        values.astype(np.float64), m["range_bin_size"],
        np.array([np.nan if v is None else v for v in m["azimuth_bins"]], dtype=np.float64),
        m["frame_id"], m["scale"], m["spacing_ratio"], m["normalization"],
    )


def save_rdh(path, rdh) -> None:
    meta = {"range_bin_size": rdh.range_bin_size, "velocity_bins": rdh.velocity_bins, "frame_id": rdh.frame_id}
    write_tensor(path, rdh.values, b"RDH1", meta)


def load_rdh(path):
    from .radar_dsp import RangeDopplerHeatmap

    values, _, m = read_tensor(path, b"RDH1")
    return RangeDopplerHeatmap(values.astype(np.float64), m["range_bin_size"], np.asarray(m["velocity_bins"]), m["frame_id"])


def save_bev(path, img) -> None:
    write_tensor(path, img.values, b"BEV1", {"range_extent": img.range_extent, "fov": img.fov})


def load_bev(path):
    from .geometry import BevImage

    values, _, m = read_tensor(path, b"BEV1")
    return BevImage(values.astype(np.float64), m["range_extent"], m["fov"])


def write_pgm(path, values) -> None:
    """8-bit binary portable graymap; values are clipped to [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0, 1)
    img = np.round(v * 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w) / maxval


def write_points_csv(path, cloud: PointCloud2D) -> None:
    mag = cloud.magnitude if cloud.magnitude is not None else np.ones(len(cloud))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m", "magnitude"])
        for (x, y), m in zip(cloud.points, mag):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(m))])


def read_points_csv(path, frame_id: int = 0) -> PointCloud2D:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pts = np.array([[float(r["x_m"]), float(r["y_m"])] for r in rows]).reshape(-1, 2)
    mag = np.array([float(r["magnitude"]) for r in rows])
    return PointCloud2D(pts, frame_id=frame_id, magnitude=mag)


def save_points(path, cloud: PointCloud2D) -> None:
    mag = cloud.magnitude if cloud.magnitude is not None else np.ones(len(cloud))
    write_tensor(path, np.column_stack([cloud.points, mag]).reshape(-1, 3), b"PCL1", {"frame_id": cloud.frame_id})


def load_points(path) -> PointCloud2D:
    arr, _, m = read_tensor(path, b"PCL1")
    arr = arr.astype(np.float64).reshape(-1, 3)
    return PointCloud2D(arr[:, :2], frame_id=m.get("frame_id", 0), magnitude=arr[:, 2])


# --- checkpoints ------------------------------------------------------------------


def save_checkpoint(path, state_dict: dict, header: dict) -> None:
    tensors, blobs, offset = [], [], 0
    for name, t in state_dict.items():
        a = np.ascontiguousarray(t.detach().cpu().numpy().astype("<f4"))
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    head = json.dumps(dict(header, tensors=tensors), default=_json_default).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"CKPT")
        fh.write(struct.pack("<II", 1, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(state_dict, header)`` with torch float32 tensors."""
    import torch

    raw = Path(path).read_bytes()
    if raw[:4] != b"CKPT":
        raise FormatError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12 : 12 + hlen])
    base = 12 + hlen
    state = {}
    for t in header["tensors"]:
        a = np.frombuffer(raw, dtype="<f4", count=t["nbytes"] // 4, offset=base + t["offset"])
        state[t["name"]] = torch.from_numpy(a.reshape(t["shape"]).copy())
    return state, header
