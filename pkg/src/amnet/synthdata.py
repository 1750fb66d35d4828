"""Synthetic risky-object scenarios and the on-disk video/manifest formats.

Every scenario with an accident contains one risky pair converging on a shared
collision point at the accident frame; everything else is background traffic.
Object flow embeddings are class-conditional Gaussians, so ``delta`` (the
distance between class means, in units of the embedding) and ``noise_sigma``
set the difficulty.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError
from .model import FrameObservation, ObjectObservation

FORMAT_VERSION = 1

MANNERS = ("angle", "sideswipe", "rear-end", "head-on", "other")
# Test-set shares of each manner of collision in ROL.
MANNER_WEIGHTS = (0.34, 0.185, 0.10, 0.055, 0.32)
NO_ACCIDENT = "none"


@dataclass(frozen=True)
class ScenarioConfig:
    num_frames: int = 100
    fps: float = 20.0
    max_objects: int = 6
    positive_ratio: float = 0.27 / 1.27
    feature_dim: int = 16
    delta: float = 4.0
    noise_sigma: float = 1.0
    ego_motion_amplitude: float = 0.5
    dropout: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValidationError("scenario_frames", "num_frames must be >= 1")
        if self.fps <= 0:
            raise ValidationError("scenario_fps", "fps must be positive")
        if self.max_objects < 2:
            raise ValidationError("scenario_objects", "max_objects must be >= 2 to hold a risky pair")
        if not 0.0 <= self.positive_ratio < 1.0:
            raise ValidationError("scenario_ratio", "positive_ratio must lie in [0, 1)")
        if self.feature_dim < 1:
            raise ValidationError("scenario_dim", "feature_dim must be >= 1")
        if self.delta < 0 or self.noise_sigma < 0 or self.ego_motion_amplitude < 0:
            raise ValidationError("scenario_scale", "delta, noise_sigma and ego_motion_amplitude must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("scenario_dropout", "dropout must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError("config_key", f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


def risky_mean(config: ScenarioConfig):
    return np.full(config.feature_dim, config.delta / math.sqrt(config.feature_dim))


def nonrisky_mean(config: ScenarioConfig):
    return np.zeros(config.feature_dim)


@dataclass(eq=False)
class VideoSample:
    video_id: str
    fps: float
    frames: list
    accident_frame: Optional[int] = None
    tags: dict = field(default_factory=dict)

    def validate(self):
        validate_video(self)
        return self

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "video_id": self.video_id,
            "fps": self.fps,
            "accident_frame": self.accident_frame,
            "tags": dict(self.tags),
            "frames": [
                {
                    "t": fr.frame_index,
                    "frame_flow": fr.frame_flow.tolist(),
                    "objects": [
                        {"track_id": o.track_id, "bbox": o.bbox.tolist(), "obj_flow": o.obj_flow.tolist(),
                         "label": o.label}
                        for o in fr.objects
                    ],
                }
                for fr in self.frames
            ],
        }

    def __eq__(self, other):
        if not isinstance(other, VideoSample):
            return NotImplemented
        return serialize_video(self) == serialize_video(other)


def serialize_video(sample: VideoSample) -> bytes:
    """Canonical bytes: equal samples always serialize identically."""
    return (json.dumps(sample.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n").encode("utf-8")


def _require(d, key, where):
    if key not in d:
        raise ValidationError("missing_key", f"{where}: missing required key {key!r}")
    return d[key]


def video_from_dict(d) -> VideoSample:
    if not isinstance(d, dict):
        raise ValidationError("schema", "video document must be an object")
    version = _require(d, "format_version", "video")
    if version != FORMAT_VERSION:
        raise ValidationError("format_version", f"unsupported video format_version {version!r}")
    frames = []
    for k, fr in enumerate(_require(d, "frames", "video")):
        where = f"frames[{k}]"
        objects = [
            ObjectObservation(_require(o, "track_id", where), _require(o, "bbox", where),
                              _require(o, "obj_flow", where), _require(o, "label", where))
            for o in _require(fr, "objects", where)
        ]
        frames.append(FrameObservation(_require(fr, "t", where), _require(fr, "frame_flow", where), objects))
    sample = VideoSample(
        video_id=str(_require(d, "video_id", "video")),
        fps=float(_require(d, "fps", "video")),
        frames=frames,
        accident_frame=_require(d, "accident_frame", "video"),
        tags=dict(d.get("tags") or {}),
    )
    return validate_video(sample)


def validate_video(sample: VideoSample) -> VideoSample:
    if sample.fps <= 0:
        raise ValidationError("fps", f"{sample.video_id}: fps must be positive")
    T = len(sample.frames)
    dim = None
    any_positive = False
    for k, fr in enumerate(sample.frames):
        if fr.frame_index != k:
            raise ValidationError("frame_contiguous", f"{sample.video_id}: frame {k} has index {fr.frame_index}")
        dim = dim if dim is not None else fr.frame_flow.shape[0]
        if fr.frame_flow.shape[0] != dim:
            raise ValidationError("flow_dim", f"{sample.video_id} frame {k}: frame_flow length {fr.frame_flow.shape[0]} != {dim}")
        seen = set()
        for o in fr.objects:
            if o.track_id in seen:
                raise ValidationError("duplicate_track_id", f"{sample.video_id} frame {k}: track_id {o.track_id} repeated")
            seen.add(o.track_id)
            if o.bbox.shape[0] != 4 or np.any(o.bbox < 0.0) or np.any(o.bbox > 1.0):
                raise ValidationError("bbox_range", f"{sample.video_id} frame {k} track {o.track_id}: bbox must be 4 values in [0,1]")
            if o.obj_flow.shape[0] != dim:
                raise ValidationError("flow_dim", f"{sample.video_id} frame {k} track {o.track_id}: obj_flow length {o.obj_flow.shape[0]} != {dim}")
            if o.label not in (0, 1):
                raise ValidationError("label_value", f"{sample.video_id} frame {k} track {o.track_id}: label must be 0 or 1")
            any_positive |= o.label == 1
            if not (np.all(np.isfinite(o.bbox)) and np.all(np.isfinite(o.obj_flow))):
                raise ValidationError("non_finite", f"{sample.video_id} frame {k} track {o.track_id}: non-finite feature")
    if sample.accident_frame is not None:
        if not isinstance(sample.accident_frame, (int, np.integer)) or not 0 <= sample.accident_frame < T:
            raise ValidationError("accident_frame_range", f"{sample.video_id}: accident_frame must be an integer frame in [0, {T})")
        sample.accident_frame = int(sample.accident_frame)
    elif any_positive:
        raise ValidationError("positive_without_accident_frame",
                              f"{sample.video_id}: has label=1 objects but no accident_frame")
    return sample


def write_video_file(sample: VideoSample, path):
    validate_video(sample)
    Path(path).write_bytes(serialize_video(sample))


def read_video_file(path) -> VideoSample:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("malformed", f"{path}: not valid JSON ({exc})") from exc
    return video_from_dict(d)


# -- generator ----------------------------------------------------------------


def _composition(config: ScenarioConfig):
    """Return ``(p_accident, k_low, p_high)`` hitting ``positive_ratio`` in expectation.

    Accident videos hold the risky pair plus ``k_low`` (or ``k_low + 1`` with
    probability ``p_high``) background tracks; accident-free videos hold
    ``max_objects`` background tracks.
    """
    r, m = config.positive_ratio, config.max_objects
    if r == 0.0:
        return 0.0, m - 2, 0.0
    n_star = 2.0 * (1.0 - r) / r
    if n_star <= m - 2:
        k = math.floor(n_star)
        return 1.0, k, n_star - k
    return r * m / 2.0, m - 2, 0.0


_MANNER_ANGLE = {"angle": (0.5 * math.pi, 0.5 * math.pi), "sideswipe": (0.2, 0.5), "rear-end": (0.0, 0.0),
                 "head-on": (math.pi, math.pi), "other": (0.0, math.pi)}


def _risky_pair(rng, tau, manner):
    """Centers converge linearly on a collision point reached at ``tau``."""
    c = rng.uniform(0.3, 0.7, size=2)
    base = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = _MANNER_ANGLE[manner]
    rel = rng.uniform(lo, hi)
    dirs = [np.array([math.cos(base), math.sin(base)]), np.array([math.cos(base + rel), math.sin(base + rel)])]
    travel = rng.uniform(0.12, 0.28, size=2)
    if manner == "rear-end":
        travel = np.sort(travel)[::-1] * np.array([1.0, 0.5])
    # displacement per frame toward the collision point
    vel = [dirs[i] * travel[i] / max(tau, 1) for i in range(2)]
    start = [c - vel[i] * tau for i in range(2)]
    size0 = rng.uniform(0.04, 0.10, size=2)
    aspect = rng.uniform(0.8, 1.5, size=2)
    growth = rng.uniform(0.5, 1.0, size=2)
    return c, start, vel, size0, aspect, growth


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def generate_video(config: ScenarioConfig, seed: int) -> VideoSample:
    """Deterministic scenario for ``(config, seed)``."""
    rng = np.random.default_rng(seed)
    T, D = config.num_frames, config.feature_dim
    p_acc, k_low, p_high = _composition(config)
    # golden-ratio sequence over seeds keeps the accident share of any run of
    # consecutive seeds within O(1/count) of p_acc
    accident = bool((seed * _GOLDEN) % 1.0 < p_acc)
    tau = None
    if accident:
        lo, hi = math.ceil(0.5 * T), math.floor(0.9 * T)
        tau = int(rng.integers(min(lo, hi), max(lo, hi) + 1))
        tau = min(tau, T - 1)
        manner = MANNERS[int(rng.choice(len(MANNERS), p=MANNER_WEIGHTS))]
        n_background = k_low + int(rng.uniform() < p_high)
    else:
        manner = NO_ACCIDENT
        n_background = config.max_objects

    mu_r, mu_n = risky_mean(config), nonrisky_mean(config)
    next_id = [1]

    def new_id():
        next_id[0] += int(rng.integers(1, 4))
        return next_id[0]

    # per-frame (track_id, center, wh, label) lists
    boxes = [[] for _ in range(T)]
    if accident:
        c, start, vel, size0, aspect, growth = _risky_pair(rng, tau, manner)
        for i in range(2):
            tid = new_id()
            for t in range(T):
                tt = min(t, tau)
                center = start[i] + vel[i] * tt
                scale = 1.0 + growth[i] * tt / max(tau, 1)
                w = size0[i] * scale
                boxes[t].append((tid, center, np.array([w, w * aspect[i]]), 1))
    for _ in range(n_background):
        pos = rng.uniform(0.1, 0.9, size=2)
        v = rng.normal(0.0, 0.004, size=2)
        wh = rng.uniform(0.03, 0.12) * np.array([1.0, rng.uniform(0.8, 1.5)])
        handoff = int(rng.integers(1, T)) if (T > 1 and rng.uniform() < 0.3) else None
        tid = new_id()
        for t in range(T):
            if handoff is not None and t == handoff:
                tid = new_id()
            boxes[t].append((tid, pos.copy(), wh, 0))
            pos = pos + v
            for ax in range(2):
                if not 0.02 <= pos[ax] <= 0.98:
                    v[ax] = -v[ax]
                    pos[ax] = min(max(pos[ax], 0.02), 0.98)

    ego_dir = rng.normal(size=D)
    ego_dir /= np.linalg.norm(ego_dir)
    ego_phase = rng.uniform(0.0, 2.0 * math.pi)

    frames = []
    for t in range(T):
        objects = []
        for tid, center, wh, label in boxes[t]:
            keep = rng.uniform() >= config.dropout
            flow = (mu_r if label else mu_n) + config.noise_sigma * rng.normal(size=D)
            if not keep:
                continue
            bbox = np.clip(np.array([center[0], center[1], wh[0], wh[1]]), 0.0, 1.0)
            objects.append(ObjectObservation(tid, bbox, flow, label))
        ego = config.ego_motion_amplitude * math.sin(2.0 * math.pi * t / T + ego_phase) * ego_dir
        if objects:
            g = np.mean([o.obj_flow for o in objects], axis=0) + ego
        else:
            g = ego
        frames.append(FrameObservation(t, g, objects))

    tags = {"manner_of_collision": manner, "accident": "yes" if accident else "no"}
    return validate_video(VideoSample(f"synth-{seed:06d}", float(config.fps), frames, tau, tags))


# -- dataset / manifest ---------------------------------------------------------


@dataclass
class ManifestEntry:
    video_id: str
    path: str
    split: str


@dataclass
class DatasetManifest:
    entries: list
    generator_config: Optional[dict] = None
    root: Optional[Path] = None
    format_version: int = FORMAT_VERSION

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "generator_config": self.generator_config,
            "videos": [asdict(e) for e in self.entries],
        }

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def load(self, split=None):
        """Read every video (optionally only one split) in manifest order."""
        root = self.root or Path(".")
        return [read_video_file(root / e.path) for e in self.entries if split is None or e.split == split]


def serialize_manifest(manifest: DatasetManifest) -> bytes:
    return (json.dumps(manifest.to_dict(), sort_keys=True, indent=1) + "\n").encode("utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("malformed", f"{path}: not valid JSON ({exc})") from exc
    if d.get("format_version") != FORMAT_VERSION:
        raise ValidationError("format_version", f"{path}: unsupported manifest format_version {d.get('format_version')!r}")
    entries = []
    seen = set()
    for v in _require(d, "videos", "manifest"):
        e = ManifestEntry(str(_require(v, "video_id", "manifest")), str(_require(v, "path", "manifest")),
                          str(_require(v, "split", "manifest")))
        if e.video_id in seen:
            raise ValidationError("duplicate_video_id", f"{path}: video_id {e.video_id!r} listed twice")
        if e.split not in ("train", "test"):
            raise ValidationError("split_value", f"{path}: split must be train or test, got {e.split!r}")
        if not (path.parent / e.path).is_file():
            raise ValidationError("missing_file", f"{path}: referenced file {e.path!r} does not exist")
        seen.add(e.video_id)
        entries.append(e)
    return DatasetManifest(entries, d.get("generator_config"), path.parent)


MANIFEST_NAME = "manifest.json"


def generate_dataset(config: ScenarioConfig, count: int, split_fraction: float, out_dir) -> DatasetManifest:
    """Write ``count`` videos (seeds ``config.seed + i``) and a manifest into ``out_dir``."""
    if count < 1:
        raise ValidationError("dataset_count", "count must be >= 1")
    if not 0.0 < split_fraction < 1.0:
        raise ValidationError("split_fraction", "split_fraction must lie in (0, 1)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train = int(round(count * split_fraction))
    order = np.random.default_rng(config.seed).permutation(count)
    train_idx = set(order[:n_train].tolist())
    entries = []
    for i in range(count):
        sample = generate_video(config, config.seed + i)
        name = f"{sample.video_id}.json"
        write_video_file(sample, out / name)
        entries.append(ManifestEntry(sample.video_id, name, "train" if i in train_idx else "test"))
    manifest = DatasetManifest(entries, config.to_dict(), out)
    (out / MANIFEST_NAME).write_bytes(serialize_manifest(manifest))
    return manifest
