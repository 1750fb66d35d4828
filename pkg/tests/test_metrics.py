import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amnet.errors import DomainError, ValidationError
from amnet.metrics import (
    MTTA_THRESHOLDS,
    ScoredSample,
    auc_from_arrays,
    evaluate,
    frame_auc,
    frame_scores,
    mtta,
    object_auc,
    object_samples,
    stratified_report,
    tta,
    tta_sweep,
)
from amnet.model import RiskinessTimeline
from amnet.synthdata import VideoSample

from oracles import brute_auc, linear_tta, mtta_99, random_timeline


def samples(scores, labels):
    return [ScoredSample(s, l) for s, l in zip(scores, labels)]


def timeline_from_frame_scores(q):
    n = len(q)
    return RiskinessTimeline(np.arange(n), np.arange(n), np.zeros(n, dtype=np.int64), np.asarray(q, dtype=float),
                             label=np.zeros(n))


# object_auc

def test_auc_perfect():
    assert object_auc(samples([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0


def test_auc_all_ties():
    assert object_auc(samples([0.4] * 6, [1, 0, 1, 0, 0, 1])) == 0.5


def test_auc_pair_count_example():
    assert object_auc(samples([0.9, 0.6, 0.4], [1, 0, 1])) == 0.5


def test_auc_undefined_single_class():
    assert object_auc(samples([0.1, 0.2], [1, 1])) is None
    assert object_auc([]) is None


@settings(max_examples=100)
@given(st.integers(0, 2**31), st.integers(2, 50), st.sampled_from([None, 4, 20]))
def test_auc_equals_brute_force(seed, n, quantize):
    r = np.random.default_rng(seed)
    s = r.uniform(size=n)
    if quantize:
        s = np.round(s * quantize) / quantize
    lab = r.integers(0, 2, size=n)
    expected = brute_auc(s.tolist(), lab.tolist())
    got = auc_from_arrays(s, lab)
    assert (got is None) == (expected is None)
    if expected is not None:
        assert got == float(expected)


@given(st.integers(0, 2**31))
def test_auc_monotone_transform_invariant(seed):
    r = np.random.default_rng(seed)
    s = np.round(r.uniform(size=30), 2)
    lab = r.integers(0, 2, size=30)
    assert auc_from_arrays(s, lab) == auc_from_arrays(np.exp(3 * s) - 7, lab)


@given(st.integers(0, 2**31))
def test_auc_label_flip(seed):
    r = np.random.default_rng(seed)
    s = np.round(r.uniform(size=25), 1)
    lab = r.integers(0, 2, size=25)
    a, b = auc_from_arrays(s, lab), auc_from_arrays(s, 1 - lab)
    if a is not None:
        assert a + b == 1.0


# frame_auc

def test_frame_auc_simple():
    tl = timeline_from_frame_scores([0.9, 0.1])
    tl.label = np.array([1.0, 0.0])
    assert frame_auc([(None, tl)]) == 1.0


def test_frame_auc_empty_frames_tie():
    pos = RiskinessTimeline(np.arange(3), np.zeros(0, int), np.zeros(0, int), np.zeros(0), label=np.zeros(0))
    assert frame_scores(pos).tolist() == [0.0, 0.0, 0.0]
    mixed = timeline_from_frame_scores([0.0, 0.0])
    mixed.label = np.array([1.0, 0.0])
    assert frame_auc([(None, mixed)]) == 0.5


def test_frame_auc_two_videos_brute_force(rng):
    tls = [random_timeline(rng, frames=15, quantize=10) for _ in range(2)]
    q, lab = [], []
    for tl in tls:
        for t in tl.frames:
            sel = tl.frame_index == t
            q.append(float(tl.score[sel].max()) if sel.any() else 0.0)
            lab.append(int(tl.label[sel].max()) if sel.any() else 0)
    assert frame_auc([(None, tl) for tl in tls]) == float(brute_auc(q, lab))


# tta / mtta

def test_tta_never_crosses():
    assert tta(timeline_from_frame_scores([0.1] * 80), 70, 0.5, 20) == 0.0


def test_tta_cross_at_zero():
    assert tta(timeline_from_frame_scores([0.8] * 80), 70, 0.5, 20) == 3.5


def test_tta_first_crossing_frame_20():
    q = [0.1] * 20 + [0.35] + [0.2] * 59
    assert tta(timeline_from_frame_scores(q), 70, 0.3, 20) == 2.5


def test_tta_ignores_crossings_after_tau():
    q = [0.0] * 71 + [0.9] * 9
    assert tta(timeline_from_frame_scores(q), 70, 0.5, 20) == 0.0


def test_tta_invalid_threshold():
    tl = timeline_from_frame_scores([0.5])
    for thr in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            tta(tl, 0, thr, 20)
    with pytest.raises(DomainError):
        tta(tl, 0, 0.5, 0)


def test_tta_risky_only_mode():
    tl = RiskinessTimeline(np.arange(3), np.array([0, 1, 1, 2]), np.array([5, 1, 5, 1]),
                           np.array([0.9, 0.1, 0.9, 0.8]), label=np.array([0.0, 1.0, 0.0, 1.0]))
    assert tta(tl, 2, 0.5, 1.0) == 2.0
    assert tta(tl, 2, 0.5, 1.0, risky_only=True) == 0.0


def test_mtta_step_function():
    q = [0.0] * 30 + [1.0] * 50
    assert mtta(timeline_from_frame_scores(q), 70, 20) == 2.0


def test_mtta_all_zero():
    assert mtta(timeline_from_frame_scores([0.0] * 40), 30, 20) == 0.0


def test_mtta_piecewise_ramp():
    q = list(np.linspace(0, 1, 60)) + [1.0] * 20
    tl = timeline_from_frame_scores(q)
    assert mtta(tl, 70, 20) == mtta_99(tl, 70, 20)


def test_thresholds_grid():
    assert len(MTTA_THRESHOLDS) == 99 and MTTA_THRESHOLDS[0] == 0.01 and MTTA_THRESHOLDS[-1] == 0.99


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_tta_mtta_equal_oracles(seed):
    r = np.random.default_rng(seed)
    tl = random_timeline(r, frames=int(r.integers(1, 40)), quantize=int(r.choice([0, 10, 100])) or None)
    tau = int(r.integers(0, tl.frames.shape[0]))
    fps = float(r.choice([10.0, 20.0, 30.0]))
    thr = float(r.choice(MTTA_THRESHOLDS))
    assert tta(tl, tau, thr, fps) == linear_tta(tl, tau, thr, fps)
    assert mtta(tl, tau, fps) == mtta_99(tl, tau, fps)


@given(st.integers(0, 2**31))
def test_tta_monotone_and_mtta_bounded(seed):
    r = np.random.default_rng(seed)
    tl = random_timeline(r, frames=25)
    tau = int(r.integers(0, 25))
    values = tta_sweep(tl, tau, 20.0)
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert 0.0 <= mtta(tl, tau, 20.0) <= tau / 20.0 + 1e-12


# reports

def video_stub(vid, tl, tau, tags):
    return VideoSample(vid, 20.0, [], tau, tags)


def report_fixture(rng):
    tls = [random_timeline(rng, frames=20, quantize=50) for _ in range(4)]
    tags = [{"manner_of_collision": "angle"}, {"manner_of_collision": "angle"},
            {"manner_of_collision": "head-on"}, {}]
    videos = [video_stub(f"v{k}", tl, 10 + k, tag) for k, (tl, tag) in enumerate(zip(tls, tags))]
    return videos, tls


def test_evaluate_matches_direct_calls(rng):
    videos, tls = report_fixture(rng)
    rep = evaluate(videos, tls)
    pooled = [s for v, tl in zip(videos, tls) for s in object_samples(v, tl)]
    assert rep.object_auc == object_auc(pooled)
    assert rep.frame_auc == frame_auc(list(zip(videos, tls)))
    expected = sum(mtta(tl, v.accident_frame, v.fps) for v, tl in zip(videos, tls)) / 4
    assert abs(rep.mtta_seconds - expected) < 1e-12
    assert rep.videos == 4 and rep.accident_videos == 4
    assert rep.positives + rep.negatives == sum(len(tl) for tl in tls)


def test_report_json_sorted_and_round_trips(rng):
    videos, tls = report_fixture(rng)
    text = evaluate(videos, tls).to_json()
    d = json.loads(text)
    assert list(d) == sorted(d)
    assert list(d["per_threshold_tta"])[:2] == ["0.01", "0.02"]


def test_stratified_single_group_equals_global(rng):
    videos, tls = report_fixture(rng)
    for v in videos:
        v.tags = {"weather": "clear"}
    rep = stratified_report(videos, tls, "weather")
    assert rep.groups["clear"].to_dict() == evaluate(videos, tls).to_dict()


def test_stratified_groups_match_filtered_recomputation(rng):
    videos, tls = report_fixture(rng)
    rep = stratified_report(videos, tls, "manner_of_collision")
    assert set(rep.groups) == {"angle", "head-on", "untagged"}
    sub = evaluate(videos[:2], tls[:2])
    assert rep.groups["angle"].to_dict() == sub.to_dict()
    assert rep.to_dict()["group_by"] == "manner_of_collision"


def test_stratified_negative_only_group(rng):
    videos, tls = report_fixture(rng)
    tls[2].label[:] = 0
    rep = stratified_report(videos, tls, "manner_of_collision")
    assert rep.groups["head-on"].object_auc is None
    assert rep.groups["head-on"].mtta_seconds >= 0.0


def test_stratified_unknown_key(rng):
    videos, tls = report_fixture(rng)
    with pytest.raises(ValidationError, match="unknown_group_key"):
        stratified_report(videos, tls, "lighting")


def test_track_granularity(rng):
    tl = random_timeline(rng, frames=10)
    s = object_samples(None, tl, granularity="track")
    assert len(s) == len(np.unique(tl.track_id))
    with pytest.raises(ValidationError):
        object_samples(None, tl, granularity="video")
