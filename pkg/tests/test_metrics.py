import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranet.metrics import (aggregate, boundary_f, boundary_map, decay_bins, default_tolerance, evaluate, jaccard,
                           metric_stats, scored_frames, sequence_stats, write_report)

from oracles import brute_boundary, brute_boundary_f, fold_stats


def test_jaccard_half_overlap():
    a = np.zeros((10, 20), np.uint8)
    b = np.zeros((10, 20), np.uint8)
    a[:, :10] = 1
    b[:, 5:15] = 1
    # 50 shared pixels, 150 in the union
    assert jaccard(a, b) == pytest.approx(50 / 150)


def test_jaccard_empty_and_mismatch():
    z = np.zeros((4, 4), np.uint8)
    assert jaccard(z, z) == 1.0
    with pytest.raises(ValueError):
        jaccard(z, np.zeros((4, 5), np.uint8))


def test_jaccard_pixel_count_oracle(rng):
    for _ in range(200):
        a = rng.uniform(size=(32, 32)) < rng.uniform()
        b = rng.uniform(size=(32, 32)) < rng.uniform()
        inter = sum(1 for y in range(32) for x in range(32) if a[y, x] and b[y, x])
        union = sum(1 for y in range(32) for x in range(32) if a[y, x] or b[y, x])
        assert jaccard(a, b, None) == (inter / union if union else 1.0)


def test_boundary_map_brute_force(rng):
    for _ in range(20):
        m = rng.uniform(size=(12, 15)) < 0.5
        np.testing.assert_array_equal(boundary_map(m), brute_boundary(m))


def test_boundary_f_brute_force(rng):
    for _ in range(50):
        a = rng.uniform(size=(16, 16)) < rng.uniform(0.1, 0.9)
        b = rng.uniform(size=(16, 16)) < rng.uniform(0.1, 0.9)
        tol = default_tolerance((16, 16))
        assert abs(boundary_f(a, b, None, None) - brute_boundary_f(a, b, tol)) <= 1e-9


def test_boundary_f_conventions():
    z = np.zeros((8, 8), bool)
    m = z.copy()
    m[2:5, 2:5] = True
    assert boundary_f(z, z, None, None) == 1.0
    assert boundary_f(m, z, None, None) == 0.0
    assert boundary_f(m, m, None, None) == 1.0
    assert default_tolerance((480, 854)) == 8


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_scores_symmetric_and_bounded(seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(size=(12, 12)) < 0.4, r.uniform(size=(12, 12)) < 0.6
    for f in (lambda p, q: jaccard(p, q, None), lambda p, q: boundary_f(p, q, None, None)):
        assert f(a, b) == pytest.approx(f(b, a))
        assert 0.0 <= f(a, b) <= 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_jaccard_monotone_in_overlap(seed):
    # growing a prediction inside the ground truth never lowers J
    r = np.random.default_rng(seed)
    gt = r.uniform(size=(12, 12)) < 0.5
    pred = gt & (r.uniform(size=(12, 12)) < 0.5)
    grown = pred | (gt & (r.uniform(size=(12, 12)) < 0.5))
    assert jaccard(grown, gt, None) >= jaccard(pred, gt, None)


def test_stats_against_fold(rng):
    for _ in range(100):
        n = int(rng.integers(1, 60))
        scores = list(rng.uniform(size=n))
        got = metric_stats(scores)
        want = fold_stats(scores)
        assert got.mean == pytest.approx(want["mean"], abs=1e-12)
        assert got.recall == want["recall"]
        if want["decay"] is None:
            assert got.decay is None
        else:
            assert got.decay == pytest.approx(want["decay"], abs=1e-12)


def test_decay_bins_overlap():
    bins = decay_bins(9)
    assert [(b.start, b.stop) for b in bins] == [(0, 3), (2, 5), (4, 7), (6, 9)]


def test_stats_edge_cases():
    with pytest.raises(ValueError):
        metric_stats([])
    s = metric_stats([1.0, 1.0, 0.0, 0.0])
    assert s.decay == 1.0 and s.recall == 0.5


def test_scored_frames():
    assert scored_frames(5) == [1, 2, 3]
    assert scored_frames(5, include_first=True, include_last=True) == [0, 1, 2, 3, 4]


def test_sequence_and_aggregate():
    r1 = sequence_stats([1.0] * 4, [0.5] * 4)
    r2 = sequence_stats([0.0] * 4, [0.5] * 4)
    g = aggregate([r1, r2])
    assert g.J.mean == 0.5 and g.F.mean == 0.5 and g.jf_mean == 0.5


def test_evaluate_multi_object_and_report(tmp_path):
    gt = []
    for t in range(6):
        m = np.zeros((16, 16), np.uint8)
        m[2:6, 2 + t:6 + t] = 1
        m[10:14, 10:14] = 2
        gt.append(m)
    pred = [m.copy() for m in gt]
    pred[2][10:14, 10:14] = 0
    report = evaluate({"v": pred}, {"v": gt})
    assert set(report["per_video"]) == {"v_1", "v_2"}
    assert report["per_video"]["v_1"]["J"]["mean"] == 1.0
    assert report["per_video"]["v_2"]["J"]["mean"] == pytest.approx(3 / 4)
    assert report["protocol"]["first_frame_scored"] is False
    write_report(report, tmp_path / "r.json", tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text())["global"]["J"]["mean"] == pytest.approx(7 / 8)
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "Sequence,J&F,J Mean,J Recall,J Decay,F Mean,F Recall,F Decay"
    with pytest.raises(ValueError):
        evaluate({}, {"v": gt})


def test_constant_and_rising_scores():
    s = metric_stats([0.8] * 8)
    assert s.mean == pytest.approx(0.8) and s.recall == 1.0 and s.decay == pytest.approx(0.0)
    assert metric_stats(list(np.linspace(0.4, 0.9, 8))).decay < 0


def test_far_boundaries_score_zero():
    a = np.zeros((40, 40), bool)
    b = np.zeros((40, 40), bool)
    a[2:8, 2:8] = True
    b[30:36, 30:36] = True
    assert boundary_f(a, b, 2, None) == 0.0
    assert jaccard(a, b, None) == 0.0
