import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radardiff.errors import EmptyCloudError
from radardiff.geometry import PointCloud2D
from radardiff.metrics import (
    FSCORE_THRESHOLD,
    FrameMetrics,
    MetricsReport,
    cdf_curve,
    chamfer,
    evaluate_frame,
    fscore,
    hausdorff,
    nn_distances,
    nn_distances_brute,
    write_table,
)


def test_default_fscore_threshold():
    assert FSCORE_THRESHOLD == 0.1


def test_identical_sets():
    p = np.random.default_rng(0).uniform(-5, 5, (50, 2))
    assert chamfer(p, p) == 0.0
    assert hausdorff(p, p) == 0.0
    assert fscore(p, p) == 1.0


def test_single_point_hand_case():
    a, b = [[0.0, 0.0]], [[3.0, 4.0]]
    assert chamfer(a, b) == pytest.approx(10.0)
    assert hausdorff(a, b) == pytest.approx(5.0)
    assert fscore(a, b) == 0.0


def test_asymmetric_hand_case():
    gt = [[0.0, 0.0], [1.0, 0.0]]
    pred = [[0.0, 0.05]]
    # gt->pred: 0.05 and sqrt(1 + 0.0025); pred->gt: 0.05
    assert chamfer(gt, pred) == pytest.approx((0.05 + np.sqrt(1.0025)) / 2 + 0.05)
    assert hausdorff(gt, pred) == pytest.approx(np.sqrt(1.0025))
    # precision 1, recall 1/2
    assert fscore(gt, pred) == pytest.approx(2 * 1 * 0.5 / 1.5)


def test_fscore_threshold_is_inclusive():
    assert fscore([[0.0, 0.0]], [[0.0, 0.25]], d=0.25) == 1.0


def test_empty_sets_raise():
    with pytest.raises(EmptyCloudError):
        chamfer(np.zeros((0, 2)), [[0.0, 0.0]])
    with pytest.raises(ValueError):
        fscore([[0, 0]], [[0, 0]], d=0)


def point_sets(max_n=500):
    return st.integers(1, max_n).flatmap(
        lambda n: arrays(np.float64, (n, 2), elements=st.floats(-20, 20, allow_nan=False, width=64))
    )


@settings(max_examples=60, deadline=None)
@given(point_sets(), point_sets())
def test_kdtree_matches_brute_force_exactly(a, b):
    assert np.array_equal(nn_distances(a, b), nn_distances_brute(a, b))
    assert chamfer(a, b) == chamfer(a, b, nn=nn_distances_brute)
    assert hausdorff(a, b) == hausdorff(a, b, nn=nn_distances_brute)
    assert fscore(a, b) == fscore(a, b, nn=nn_distances_brute)


@settings(max_examples=40, deadline=None)
@given(point_sets(50), point_sets(50))
def test_metric_symmetries(a, b):
    assert chamfer(a, b) == pytest.approx(chamfer(b, a))
    assert hausdorff(a, b) == hausdorff(b, a)
    assert fscore(a, b) == pytest.approx(fscore(b, a))
    assert 0 <= fscore(a, b) <= 1


def test_exact_ties_on_a_lattice():
    g = np.stack(np.meshgrid(np.arange(10) * 0.1, np.arange(10) * 0.1), -1).reshape(-1, 2)
    q = g + 0.05
    assert np.array_equal(nn_distances(q, g), nn_distances_brute(q, g))


def test_cdf_curve():
    assert cdf_curve([3.0, 1.0, 2.0]) == [(1.0, 1 / 3), (2.0, 2 / 3), (3.0, 1.0)]
    with pytest.raises(ValueError):
        cdf_curve([])


def test_evaluate_frame_missing_prediction():
    gt = PointCloud2D([[1.0, 0.0]], frame_id=4)
    m = evaluate_frame(gt, PointCloud2D(np.zeros((0, 2))), scene="corridor")
    assert m.missing and np.isnan(m.cd) and m.fscore == 0.0 and m.frame_id == 4


def test_report_aggregation_and_csv_roundtrip(tmp_path):
    rep = MetricsReport(
        "m",
        [
            FrameMetrics(0, 1.0, 2.0, 0.5, "corridor"),
            FrameMetrics(1, 3.0, 4.0, 0.7, "corridor"),
            FrameMetrics(2, float("nan"), float("nan"), 0.0, "random_boxes", True),
            FrameMetrics(3, 0.25, 0.5, 0.9, "random_boxes"),
        ],
    )
    agg = rep.aggregate()
    assert agg["cd"] == pytest.approx(4.25 / 3) and agg["n_missing"] == 1
    assert rep.aggregate("corridor")["fscore"] == pytest.approx(0.6)
    assert rep.aggregate("random_boxes")["fscore"] == pytest.approx(0.45)
    rep.write_csv(tmp_path / "r.csv")
    back = MetricsReport.read_csv(tmp_path / "r.csv", "m")
    assert [f.frame_id for f in back.frames] == [0, 1, 2, 3]
    assert back.frames[3].cd == 0.25 and back.frames[2].missing
    rep.write_cdf_csv(tmp_path / "cdf.csv")
    lines = (tmp_path / "cdf.csv").read_text().splitlines()
    assert lines[0] == "cd,cumulative_fraction" and len(lines) == 4
    text = write_table([rep], tmp_path / "t.csv")
    assert text.splitlines()[0].startswith("method,corridor_cd,corridor_hd,corridor_fscore,random_boxes_cd")
    assert text.splitlines()[1].endswith(",1")
