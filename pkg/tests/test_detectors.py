import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radardiff.detectors import (
    CfarConfig,
    ca_alpha,
    ca_pfa,
    cfar_2d,
    detection_mask,
    detections_to_points,
    noise_estimate,
    os_alpha,
    os_pfa,
)
from radardiff.errors import ConfigurationError
from radardiff.radar_dsp import RangeAzimuthHeatmap, angle_bins


def brute_noise(x, cfg):
    """Loop over every interior cell and collect its cross-shaped training ring."""
    w, g = cfg.half_window, cfg.guard_cells
    H, W = x.shape
    out = np.zeros((H - 2 * w, W - 2 * w))
    for i in range(w, H - w):
        for j in range(w, W - w):
            ring = []
            for o in range(g + 1, w + 1):
                ring += [x[i - o, j], x[i + o, j], x[i, j - o], x[i, j + o]]
            ring = np.sort(ring)
            out[i - w, j - w] = ring.mean() if cfg.variant == "CA" else ring[cfg.os_rank - 1]
    return out


@pytest.mark.parametrize("variant", ["CA", "OS"])
@pytest.mark.parametrize("train,guard", [(1, 0), (3, 1), (4, 2)])
def test_noise_estimate_matches_brute_force(variant, train, guard):
    x = np.random.default_rng(train * 10 + guard).exponential(size=(20, 23))
    cfg = CfarConfig(variant, train, guard)
    np.testing.assert_allclose(noise_estimate(x, cfg), brute_noise(x, cfg), rtol=0, atol=1e-14)


def test_default_config():
    cfg = CfarConfig()
    assert cfg.variant == "OS" and cfg.n_train == 32 and cfg.os_rank == 24
    assert cfg.half_window == 10
    assert os_pfa(cfg.scale_factor, 32, 24) == pytest.approx(1e-3, rel=1e-9)


@pytest.mark.parametrize("pfa,n", [(1e-3, 32), (1e-6, 16), (0.1, 4)])
def test_ca_threshold_roundtrip(pfa, n):
    assert ca_pfa(ca_alpha(pfa, n), n) == pytest.approx(pfa, rel=1e-12)


@pytest.mark.parametrize("pfa,n,k", [(1e-3, 32, 24), (1e-4, 16, 12), (1e-2, 8, 1)])
def test_os_threshold_roundtrip(pfa, n, k):
    assert os_pfa(os_alpha(pfa, n, k), n, k) == pytest.approx(pfa, rel=1e-9)


def test_os_pfa_single_cell_matches_ca():
    # with k = N = 1 both detectors use the single training cell
    assert os_pfa(3.0, 1, 1) == pytest.approx(ca_pfa(3.0, 1))


@pytest.mark.parametrize("variant", ["CA", "OS"])
def test_empirical_pfa_on_exponential_noise(variant):
    rng = np.random.default_rng(42 if variant == "CA" else 43)
    x = rng.exponential(size=(337, 337))
    cfg = CfarConfig(variant, pfa=1e-3)
    n_cells = (337 - 2 * cfg.half_window) ** 2
    rate = len(cfar_2d(x, cfg)) / n_cells
    assert n_cells >= 100_000
    assert 0.5e-3 <= rate <= 2e-3


def masking_fixture():
    x = np.ones((41, 41))
    x[20, 20] = 30.0  # target
    x[24, 20] = 200.0  # strong interferer in the training ring
    return x


def test_os_survives_interferer_that_masks_ca():
    x = masking_fixture()
    ca = detection_mask(x, CfarConfig("CA", 8, 2))
    os_ = detection_mask(x, CfarConfig("OS", 8, 2))
    assert not ca[20, 20]
    assert os_[20, 20]
    assert os_[24, 20]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3), variant=st.sampled_from(["CA", "OS"]))
def test_detections_invariant_to_scaling(seed, scale, variant):
    x = np.random.default_rng(seed).exponential(size=(32, 32))
    x[10:13, 15] *= 50
    cfg = CfarConfig(variant, 4, 1)
    assert np.array_equal(detection_mask(x, cfg), detection_mask(x * scale, cfg))


def test_zero_noise_reduces_to_positive_test():
    x = np.zeros((21, 21))
    x[10, 10] = 1e-30
    d = cfar_2d(x, CfarConfig("CA", 2, 1))
    assert [(e.range_bin, e.azimuth_bin) for e in d] == [(10, 10)]
    assert d[0].snr_estimate == np.inf


def test_borders_are_skipped():
    x = np.ones((30, 30))
    x[0, 0] = x[29, 15] = 1e6
    assert cfar_2d(x, CfarConfig("OS", 4, 1)) == []


@pytest.mark.parametrize(
    "kw",
    [
        {"variant": "GO"},
        {"train_cells": 0},
        {"guard_cells": -1},
        {"os_rank": 0},
        {"os_rank": 33},
        {"scale_factor": -1.0},
    ],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        CfarConfig(**kw)


def test_window_larger_than_heatmap():
    with pytest.raises(ConfigurationError):
        cfar_2d(np.ones((15, 40)), CfarConfig())


def test_detections_to_points_geometry():
    h = RangeAzimuthHeatmap(np.zeros((40, 64)), 0.2, angle_bins(64))
    h.values[20, 32] = h.values[10, 48] = 1.0
    dets = cfar_2d(h, CfarConfig("CA", 2, 1))
    pc = detections_to_points(dets, h, frame_id=5)
    assert pc.frame_id == 5 and len(pc) == 2
    pts = sorted(map(tuple, np.round(pc.points, 9)))
    expected = sorted([(4.0, 0.0), (2.0 * np.cos(np.pi / 6), 2.0 * np.sin(np.pi / 6))])
    np.testing.assert_allclose(pts, expected, atol=1e-9)


def test_detections_to_points_empty():
    h = RangeAzimuthHeatmap(np.zeros((4, 8)), 0.2, angle_bins(8))
    assert len(detections_to_points([], h)) == 0
