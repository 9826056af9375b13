import numpy as np
import pytest
import torch

from radardiff import io
from radardiff.denoisers import EDMDenoiser, TinyUNet, UNetConfig
from radardiff.errors import FormatError
from radardiff.geometry import BevImage, PointCloud2D
from radardiff.radar_dsp import make_rah, make_rdh
from radardiff.signal_sim import Scatterer, Scene, WaveformConfig, simulate_frame


@pytest.fixture
def cube():
    cfg = WaveformConfig(samples_per_chirp=32, chirps_per_frame=8, n_tx=1, n_rx=4)
    return simulate_frame(Scene([Scatterer(2.0, 0.2, 1.0, 1.0)]), cfg, 0.1, np.random.default_rng(0))


def test_tensor_header_layout(tmp_path):
    io.write_tensor(tmp_path / "t.bin", np.arange(6.0).reshape(2, 3), b"BEV1")
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw[:4] == b"BEV1"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [2, 2, 3]
    assert np.frombuffer(raw[16:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_bad_magic(tmp_path):
    with pytest.raises(FormatError):
        io.write_tensor(tmp_path / "x", np.zeros(2), b"XXXX")
    io.write_tensor(tmp_path / "t.bin", np.zeros(2), b"BEV1")
    with pytest.raises(FormatError):
        io.read_tensor(tmp_path / "t.bin", expect=b"RAH1")


def test_cube_roundtrip(tmp_path, cube):
    io.save_cube(tmp_path / "c.bin", cube)
    back = io.load_cube(tmp_path / "c.bin")
    assert back.meta == cube.meta
    np.testing.assert_allclose(back.data, cube.data, rtol=1e-6, atol=1e-6)


def test_heatmap_roundtrips(tmp_path, cube):
    rah = make_rah(cube, 16, frame_id=3)
    io.save_rah(tmp_path / "r.bin", rah)
    back = io.load_rah(tmp_path / "r.bin")
    np.testing.assert_allclose(back.values, rah.values, atol=1e-7)
    np.testing.assert_array_equal(back.azimuth_bins, rah.azimuth_bins)
    assert (back.frame_id, back.scale, back.range_bin_size) == (3, "db", rah.range_bin_size)

    rdh = make_rdh(cube)
    io.save_rdh(tmp_path / "d.bin", rdh)
    back = io.load_rdh(tmp_path / "d.bin")
    np.testing.assert_allclose(back.values, rdh.values, rtol=1e-6)


def test_bev_and_pgm(tmp_path):
    img = BevImage(np.random.default_rng(0).random((10, 12)), 5.0, 1.0)
    io.save_bev(tmp_path / "b.bin", img)
    back = io.load_bev(tmp_path / "b.bin")
    assert (back.range_extent, back.fov) == (5.0, 1.0)
    np.testing.assert_allclose(back.values, img.values, atol=1e-7)
    v = np.zeros((10, 12))
    v[0, 0], v[3, 4] = 1.0, 10 / 255  # 10 is ASCII newline: must survive
    io.write_pgm(tmp_path / "b.pgm", v)
    np.testing.assert_allclose(io.read_pgm(tmp_path / "b.pgm"), v, atol=0.5 / 255)


def test_points_roundtrips(tmp_path):
    pc = PointCloud2D([[1.0, 2.0], [0.1, -0.3]], frame_id=7, magnitude=[0.5, 0.25])
    io.write_points_csv(tmp_path / "p.csv", pc)
    back = io.read_points_csv(tmp_path / "p.csv", 7)
    assert np.array_equal(back.points, pc.points) and np.array_equal(back.magnitude, pc.magnitude)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "x_m,y_m,magnitude"
    io.save_points(tmp_path / "p.bin", pc)
    back = io.load_points(tmp_path / "p.bin")
    assert back.frame_id == 7
    np.testing.assert_allclose(back.points, pc.points, rtol=1e-7)
    io.save_points(tmp_path / "e.bin", PointCloud2D(np.zeros((0, 2))))
    assert len(io.load_points(tmp_path / "e.bin")) == 0


def test_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(0)
    model = EDMDenoiser(TinyUNet(UNetConfig(channels=(4, 8), emb_dim=8)))
    header = {"kind": "teacher", "seed": 3, "step": 10, "schedule_hash": "abc"}
    io.save_checkpoint(tmp_path / "m.ckpt", model.state_dict(), header)
    assert not (tmp_path / "m.ckpt.tmp").exists()
    state, h = io.load_checkpoint(tmp_path / "m.ckpt")
    assert h["seed"] == 3 and h["step"] == 10 and h["schedule_hash"] == "abc"
    ref = model.state_dict()
    assert set(state) == set(ref)
    for k in ref:
        assert torch.equal(state[k], ref[k].float())


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        io.load_checkpoint(tmp_path / "x.ckpt")
