"""Evaluation metrics: object/frame AUC, time-to-accident and stratified reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, ValidationError

MTTA_THRESHOLDS = tuple(k / 100 for k in range(1, 100))


@dataclass
class ScoredSample:
    score: float
    label: int
    video_id: Optional[str] = None
    track_id: Optional[int] = None
    frame_index: Optional[int] = None


def auc_from_arrays(scores, labels):
    """Rank-based (Mann-Whitney) AUC with ties counted as half. ``None`` if a class is absent."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    P = int(pos.sum())
    N = int(labels.shape[0] - P)
    if P == 0 or N == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = float(ranks[pos].sum()) - P * (P + 1) / 2.0
    return u / (P * N)


def object_auc(samples):
    """AUC over a sequence of :class:`ScoredSample`."""
    samples = list(samples)
    return auc_from_arrays([s.score for s in samples], [s.label for s in samples])


def object_samples(video, timeline, granularity="appearance"):
    """ScoredSamples for one video; ``granularity="track"`` keeps each track's max."""
    labels = _timeline_labels(video, timeline)
    vid = getattr(video, "video_id", None)
    if granularity == "appearance":
        return [ScoredSample(float(s), int(l), vid, int(t), int(f))
                for s, l, t, f in zip(timeline.score, labels, timeline.track_id, timeline.frame_index)]
    if granularity == "track":
        out = []
        for tid in np.unique(timeline.track_id):
            sel = timeline.track_id == tid
            out.append(ScoredSample(float(timeline.score[sel].max()), int(labels[sel].max()), vid, int(tid)))
        return out
    raise ValidationError("granularity", f"unknown granularity {granularity!r}")


def _timeline_labels(video, timeline):
    if getattr(timeline, "label", None) is not None:
        return timeline.label.astype(np.int64)
    lookup = {(o.track_id, fr.frame_index): o.label for fr in video.frames for o in fr.objects}
    return np.array([lookup[(int(t), int(f))] for t, f in zip(timeline.track_id, timeline.frame_index)],
                    dtype=np.int64)


def frame_scores(timeline, risky_only=False):
    """Per-frame max score aligned with ``timeline.frames`` (0 for empty frames)."""
    q = np.zeros(timeline.frames.shape[0])
    score = timeline.score
    pos = np.searchsorted(timeline.frames, timeline.frame_index)
    if risky_only:
        keep = timeline.label == 1
        pos, score = pos[keep], score[keep]
    np.maximum.at(q, pos, score)
    return q


def frame_samples(video, timeline):
    """One ScoredSample per frame: max object score, positive iff any object is risky."""
    labels = _timeline_labels(video, timeline)
    q = frame_scores(timeline)
    lab = np.zeros(timeline.frames.shape[0], dtype=np.int64)
    pos = np.searchsorted(timeline.frames, timeline.frame_index)
    np.maximum.at(lab, pos, labels)
    vid = getattr(video, "video_id", None)
    return [ScoredSample(float(s), int(l), vid, None, int(f)) for s, l, f in zip(q, lab, timeline.frames)]


def frame_auc(pairs):
    """Pooled frame-level AUC over ``(video, timeline)`` pairs."""
    samples = []
    for video, timeline in pairs:
        samples.extend(frame_samples(video, timeline))
    return object_auc(samples)


def _check_threshold(threshold):
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")


def _tta_from_frame_scores(frames, q, tau, threshold, fps):
    hit = np.flatnonzero((frames <= tau) & (q >= threshold))
    if hit.size == 0:
        return 0.0
    return (tau - int(frames[hit[0]])) / fps


def tta(timeline, tau, threshold, fps, risky_only=False):
    """Seconds between the first frame whose max score reaches ``threshold`` and ``tau``."""
    _check_threshold(threshold)
    if fps <= 0:
        raise DomainError(f"fps must be positive, got {fps}")
    return _tta_from_frame_scores(timeline.frames, frame_scores(timeline, risky_only), tau, threshold, fps)


def tta_sweep(timeline, tau, fps, risky_only=False, thresholds=MTTA_THRESHOLDS):
    if fps <= 0:
        raise DomainError(f"fps must be positive, got {fps}")
    q = frame_scores(timeline, risky_only)
    return [_tta_from_frame_scores(timeline.frames, q, tau, thr, fps) for thr in thresholds]


def mtta(timeline, tau, fps, risky_only=False):
    """Mean TTA over the thresholds 0.01, 0.02, ..., 0.99."""
    values = tta_sweep(timeline, tau, fps, risky_only)
    return sum(values) / len(values)


@dataclass
class MetricsReport:
    object_auc: Optional[float]
    frame_auc: Optional[float]
    mtta_seconds: float
    per_threshold_tta: dict
    positives: int
    negatives: int
    videos: int
    accident_videos: int
    groups: dict = field(default_factory=dict)
    group_by: Optional[str] = None

    def to_dict(self):
        d = {
            "object_auc": self.object_auc,
            "frame_auc": self.frame_auc,
            "mtta_seconds": self.mtta_seconds,
            "per_threshold_tta": dict(self.per_threshold_tta),
            "counts": {"positives": self.positives, "negatives": self.negatives,
                       "videos": self.videos, "accident_videos": self.accident_videos},
        }
        if self.group_by is not None:
            d["group_by"] = self.group_by
            d["groups"] = {k: v.to_dict() for k, v in self.groups.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def evaluate(videos, timelines, granularity="appearance", risky_only_tta=False):
    """Global report over aligned ``videos`` and ``timelines``."""
    videos = list(videos)
    samples, frames = [], []
    sweeps = []
    for video, tl in zip(videos, timelines):
        samples.extend(object_samples(video, tl, granularity))
        frames.extend(frame_samples(video, tl))
        if video.accident_frame is not None:
            sweeps.append(tta_sweep(tl, video.accident_frame, video.fps, risky_only_tta))
    per_thr = {}
    if sweeps:
        arr = np.array(sweeps)
        for j, thr in enumerate(MTTA_THRESHOLDS):
            per_thr[f"{thr:.2f}"] = float(sum(arr[:, j].tolist()) / len(sweeps))
        mtta_s = float(sum(sum(s) / len(s) for s in sweeps) / len(sweeps))
    else:
        mtta_s = 0.0
    positives = sum(1 for s in samples if s.label == 1)
    return MetricsReport(
        object_auc=object_auc(samples),
        frame_auc=object_auc(frames),
        mtta_seconds=mtta_s,
        per_threshold_tta=per_thr,
        positives=positives,
        negatives=len(samples) - positives,
        videos=len(videos),
        accident_videos=len(sweeps),
    )


UNTAGGED = "untagged"


def stratified_report(videos, timelines, group_by, **kwargs):
    """Global report plus one sub-report per value of tag ``group_by``."""
    videos = list(videos)
    timelines = list(timelines)
    if not any(group_by in (v.tags or {}) for v in videos):
        raise ValidationError("unknown_group_key", f"no video carries tag {group_by!r}")
    report = evaluate(videos, timelines, **kwargs)
    groups = {}
    for v, tl in zip(videos, timelines):
        key = str((v.tags or {}).get(group_by, UNTAGGED))
        groups.setdefault(key, ([], []))
        groups[key][0].append(v)
        groups[key][1].append(tl)
    report.group_by = group_by
    report.groups = {k: evaluate(vs, tls, **kwargs) for k, (vs, tls) in sorted(groups.items())}
    return report
