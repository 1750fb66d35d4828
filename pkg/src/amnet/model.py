"""AM-Net: dual GRU streams with attention-weighted recurrent feedback.

Two entry points compute the same function. :func:`forward_frame` works one
frame at a time against an explicit :class:`TrackStore` using the
:mod:`amnet.diffmath` primitives; :func:`forward_video` and
:func:`backward_video` pack a whole video and run the compiled kernels in
:mod:`amnet.kernels`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .diffmath import (
    AffineParams,
    GruParams,
    _ParamTree,
    affine,
    as_vector,
    gru_cell,
    relu,
    softmax,
)
from .errors import DomainError, ShapeError, ValidationError
from . import kernels


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and ablation toggles.

    Defaults are desk-scale; :meth:`published_scale` returns the full-size dimensions.
    """

    flow_obj_dim: int = 16
    flow_reduced_dim: int = 16
    bbox_hidden: int = 16
    flow_hidden: int = 32
    head_hidden: int = 64
    use_bbox: bool = True
    use_obj_flow: bool = True
    use_frame_flow: bool = True
    use_attention: bool = True
    track_eviction_age: int = 10

    def __post_init__(self):
        for name in ("flow_obj_dim", "flow_reduced_dim", "bbox_hidden", "flow_hidden", "head_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValidationError("config_dim", f"{name} must be >= 1, got {getattr(self, name)}")
        if self.flow_reduced_dim % 2:
            raise ValidationError("config_dim", f"flow_reduced_dim must be even, got {self.flow_reduced_dim}")
        if not (self.use_bbox or self.use_obj_flow):
            raise ValidationError("config_toggle", "at least one of use_bbox/use_obj_flow must be enabled")
        if self.track_eviction_age < 0:
            raise ValidationError("config_dim", "track_eviction_age must be >= 0")

    @classmethod
    def published_scale(cls, **overrides):
        base = dict(flow_obj_dim=2048, flow_reduced_dim=512, bbox_hidden=32, flow_hidden=256, head_hidden=64)
        base.update(overrides)
        return cls(**base)

    @property
    def use_flow(self):
        return self.use_obj_flow or self.use_frame_flow

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError("config_key", f"unknown model_config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class ModelParams(_ParamTree):
    theta0: AffineParams
    gru_bbox: GruParams
    gru_flow: GruParams
    w_b: np.ndarray
    w_f: np.ndarray
    theta3: AffineParams
    theta4: AffineParams

    def __post_init__(self):
        self.w_b = np.ascontiguousarray(self.w_b, dtype=np.float64)
        self.w_f = np.ascontiguousarray(self.w_f, dtype=np.float64)

    def expected_shapes(self, config):
        return expected_param_shapes(config)

    def check(self, config):
        expected = expected_param_shapes(config)
        actual = {k: v.shape for k, v in self.named_arrays().items()}
        for name, shape in expected.items():
            if actual.get(name) != shape:
                raise ShapeError(f"parameter {name} has shape {actual.get(name)}, config implies {shape}")

    @classmethod
    def from_named_arrays(cls, arrays):
        def aff(p):
            return AffineParams(arrays[f"{p}.W"], arrays[f"{p}.b"])

        def gru(p):
            return GruParams(*(arrays[f"{p}.{k}"] for k in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")))

        return cls(aff("theta0"), gru("gru_bbox"), gru("gru_flow"), arrays["w_b"], arrays["w_f"],
                   aff("theta3"), aff("theta4"))


def expected_param_shapes(config):
    D, d2, n, N, k = (config.flow_obj_dim, config.flow_reduced_dim, config.bbox_hidden,
                      config.flow_hidden, config.head_hidden)
    shapes = {"theta0.W": (d2, 2 * D), "theta0.b": (d2,)}
    for prefix, hidden, inp in (("gru_bbox", n, 4), ("gru_flow", N, d2)):
        for g in "zrh":
            shapes[f"{prefix}.W_{g}"] = (hidden, inp)
        for g in "zrh":
            shapes[f"{prefix}.U_{g}"] = (hidden, hidden)
        for g in "zrh":
            shapes[f"{prefix}.b_{g}"] = (hidden,)
    shapes.update({"w_b": (n,), "w_f": (N,), "theta3.W": (k, n + N), "theta3.b": (k,),
                   "theta4.W": (2, k), "theta4.b": (2,)})
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, attention vectors in +-sqrt(3/hidden)."""
    rng = np.random.default_rng(seed)

    def glorot(out_dim, in_dim):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return rng.uniform(-limit, limit, size=(out_dim, in_dim))

    def gru(inp, hidden):
        return GruParams(
            glorot(hidden, inp), glorot(hidden, inp), glorot(hidden, inp),
            glorot(hidden, hidden), glorot(hidden, hidden), glorot(hidden, hidden),
            np.zeros(hidden), np.zeros(hidden), np.zeros(hidden),
        )

    D, d2, n, N, k = (config.flow_obj_dim, config.flow_reduced_dim, config.bbox_hidden,
                      config.flow_hidden, config.head_hidden)
    theta0 = AffineParams(glorot(d2, 2 * D), np.zeros(d2))
    gru_bbox = gru(4, n)
    gru_flow = gru(d2, N)
    w_b = rng.uniform(-np.sqrt(3.0 / n), np.sqrt(3.0 / n), size=n)
    w_f = rng.uniform(-np.sqrt(3.0 / N), np.sqrt(3.0 / N), size=N)
    theta3 = AffineParams(glorot(k, n + N), np.zeros(k))
    theta4 = AffineParams(glorot(2, k), np.zeros(2))
    return ModelParams(theta0, gru_bbox, gru_flow, w_b, w_f, theta3, theta4)


@dataclass
class ObjectObservation:
    track_id: int
    bbox: np.ndarray
    obj_flow: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.track_id = int(self.track_id)
        self.bbox = as_vector(self.bbox, "bbox")
        self.obj_flow = as_vector(self.obj_flow, "obj_flow")
        if self.label is not None:
            self.label = int(self.label)


@dataclass
class FrameObservation:
    frame_index: int
    frame_flow: np.ndarray
    objects: list = field(default_factory=list)

    def __post_init__(self):
        self.frame_index = int(self.frame_index)
        self.frame_flow = as_vector(self.frame_flow, "frame_flow")

    def sorted_objects(self):
        ids = [o.track_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate_track_id", f"frame {self.frame_index} repeats a track_id: {ids}")
        return sorted(self.objects, key=lambda o: o.track_id)


@dataclass
class TrackState:
    h_hat_b: np.ndarray
    h_hat_f: np.ndarray
    last_seen: int


class TrackStore(dict):
    """``track_id -> TrackState`` for weighted hidden states carried across frames."""

    def copy(self):
        return TrackStore({k: TrackState(v.h_hat_b.copy(), v.h_hat_f.copy(), v.last_seen) for k, v in self.items()})

    def evict(self, frame_index, max_age):
        for tid in [t for t, st in self.items() if frame_index - st.last_seen > max_age]:
            del self[tid]


@dataclass
class RiskinessTimeline:
    """Scores for every (track, frame) appearance of one video.

    Arrays are aligned row-wise in frame-major, ascending-track order.
    ``frames`` lists every frame index of the video, including empty frames.
    """

    frames: np.ndarray
    frame_index: np.ndarray
    track_id: np.ndarray
    score: np.ndarray
    alpha_b: Optional[np.ndarray] = None
    alpha_f: Optional[np.ndarray] = None
    label: Optional[np.ndarray] = None

    def __len__(self):
        return self.score.shape[0]

    def series(self, track_id):
        sel = self.track_id == track_id
        return list(zip(self.frame_index[sel].tolist(), self.score[sel].tolist()))

    @property
    def scores(self):
        out = {}
        for tid in np.unique(self.track_id).tolist():
            out[tid] = self.series(tid)
        return out

    def attention(self, frame_index):
        """``track_id -> (alpha_b, alpha_f)`` for one frame, empty when attention is off."""
        if self.alpha_b is None:
            return {}
        sel = np.flatnonzero(self.frame_index == frame_index)
        return {int(self.track_id[j]): (float(self.alpha_b[j]), float(self.alpha_f[j])) for j in sel}


# -- per-frame reference path -------------------------------------------------


def reduce_flow(obj_flow, frame_flow, params: ModelParams, config: ModelConfig):
    """ReLU(theta0 [obj_flow; frame_flow]); disabled streams are zeroed first."""
    obj_flow = as_vector(obj_flow, "obj_flow")
    frame_flow = as_vector(frame_flow, "frame_flow")
    D = config.flow_obj_dim
    if obj_flow.shape[0] != D or frame_flow.shape[0] != D:
        raise ShapeError(f"flow vectors must have length {D}, got {obj_flow.shape[0]} and {frame_flow.shape[0]}")
    if not config.use_obj_flow:
        obj_flow = np.zeros(D)
    if not config.use_frame_flow:
        frame_flow = np.zeros(D)
    return relu(affine(np.concatenate([obj_flow, frame_flow]), params.theta0))


def attention_weights(H, w):
    """Softmax of ``tanh(H^T) w`` over the M columns of ``H`` (hidden x M)."""
    H = np.asarray(H, dtype=np.float64)
    w = as_vector(w, "w")
    if H.ndim != 2 or H.shape[1] == 0:
        raise DomainError("attention_weights needs at least one object column")
    if H.shape[0] != w.shape[0]:
        raise ShapeError(f"H has {H.shape[0]} rows but w has length {w.shape[0]}")
    return softmax(np.tanh(H.T) @ w)


def apply_attention(H, alpha):
    """Scale column i of ``H`` by ``alpha[i]``."""
    H = np.asarray(H, dtype=np.float64)
    alpha = as_vector(alpha, "alpha")
    if H.ndim != 2 or H.shape[1] != alpha.shape[0]:
        raise ShapeError(f"alpha has length {alpha.shape[0]} but H has shape {H.shape}")
    return H * alpha[None, :]


def score_head(h_hat, params: ModelParams):
    h_hat = as_vector(h_hat, "h_hat")
    if h_hat.shape[0] != params.theta3.in_dim:
        raise ShapeError(f"h_hat has length {h_hat.shape[0]}, head expects {params.theta3.in_dim}")
    logits = affine(relu(affine(h_hat, params.theta3)), params.theta4)
    return float(softmax(logits)[1])


def forward_frame(params: ModelParams, config: ModelConfig, obs: FrameObservation, store: TrackStore):
    """Advance one frame.

    Returns ``(scores, new_store, attention)`` where ``scores`` maps track id to
    riskiness and ``attention`` maps track id to ``(alpha_b, alpha_f)`` (empty
    when attention is disabled). ``store`` is not mutated.
    """
    objects = obs.sorted_objects()
    store = store.copy()
    n, N = config.bbox_hidden, config.flow_hidden
    if not objects:
        store.evict(obs.frame_index, config.track_eviction_age)
        return {}, store, {}

    hb_cols, hf_cols = [], []
    for o in objects:
        prev = store.get(o.track_id)
        hb_prev = prev.h_hat_b if prev is not None else np.zeros(n)
        hf_prev = prev.h_hat_f if prev is not None else np.zeros(N)
        if config.use_bbox:
            hb_cols.append(gru_cell(o.bbox, hb_prev, params.gru_bbox))
        else:
            hb_cols.append(np.zeros(n))
        if config.use_flow:
            f = reduce_flow(o.obj_flow, obs.frame_flow, params, config)
            hf_cols.append(gru_cell(f, hf_prev, params.gru_flow))
        else:
            hf_cols.append(np.zeros(N))
    H_b = np.stack(hb_cols, axis=1)
    H_f = np.stack(hf_cols, axis=1)

    attention = {}
    if config.use_attention:
        a_b = attention_weights(H_b, params.w_b)
        a_f = attention_weights(H_f, params.w_f)
        H_b = apply_attention(H_b, a_b)
        H_f = apply_attention(H_f, a_f)
        attention = {o.track_id: (float(a_b[i]), float(a_f[i])) for i, o in enumerate(objects)}

    scores = {}
    for i, o in enumerate(objects):
        store[o.track_id] = TrackState(H_b[:, i].copy(), H_f[:, i].copy(), obs.frame_index)
        scores[o.track_id] = score_head(np.concatenate([H_b[:, i], H_f[:, i]]), params)
    store.evict(obs.frame_index, config.track_eviction_age)
    return scores, store, attention


# -- packed whole-video path ---------------------------------------------------


@dataclass
class PackedVideo:
    bbox: np.ndarray
    flow_in: np.ndarray
    prev: np.ndarray
    frame_ptr: np.ndarray
    frames: np.ndarray
    frame_index: np.ndarray
    track_id: np.ndarray
    labels: Optional[np.ndarray]


def pack_video(config: ModelConfig, frames: Sequence[FrameObservation], require_labels=False) -> PackedVideo:
    """Flatten a video into kernel arrays, resolving track-state links and eviction."""
    D = config.flow_obj_dim
    last = None
    bbox_rows, flow_rows, prev_rows, fi_rows, tid_rows, lab_rows = [], [], [], [], [], []
    frame_ptr = [0]
    last_row = {}
    last_seen = {}
    zeros = np.zeros(D)
    labels_ok = True
    for obs in frames:
        t = obs.frame_index
        if last is not None and t <= last:
            raise ValidationError("frame_order", f"frame indices must strictly increase, got {last} then {t}")
        last = t
        if obs.frame_flow.shape[0] != D:
            raise ShapeError(f"frame {t}: frame_flow has length {obs.frame_flow.shape[0]}, expected {D}")
        g = obs.frame_flow if config.use_frame_flow else zeros
        for o in obs.sorted_objects():
            if o.bbox.shape[0] != 4:
                raise ShapeError(f"frame {t} track {o.track_id}: bbox must have 4 entries")
            if o.obj_flow.shape[0] != D:
                raise ShapeError(f"frame {t} track {o.track_id}: obj_flow has length {o.obj_flow.shape[0]}, expected {D}")
            row = len(bbox_rows)
            bbox_rows.append(o.bbox)
            flow_rows.append(np.concatenate([o.obj_flow if config.use_obj_flow else zeros, g]))
            prev_rows.append(last_row.get(o.track_id, -1))
            fi_rows.append(t)
            tid_rows.append(o.track_id)
            if o.label not in (None, 0, 1):
                raise ValidationError("label_value", f"frame {t} track {o.track_id}: label must be 0 or 1, got {o.label}")
            if o.label is None:
                labels_ok = False
                if require_labels:
                    raise ValidationError("missing_label", f"frame {t} track {o.track_id} has no label")
            lab_rows.append(-1 if o.label is None else o.label)
            last_row[o.track_id] = row
            last_seen[o.track_id] = t
        frame_ptr.append(len(bbox_rows))
        for tid in [k for k, s in last_seen.items() if t - s > config.track_eviction_age]:
            del last_seen[tid]
            del last_row[tid]
    S = len(bbox_rows)
    return PackedVideo(
        bbox=np.array(bbox_rows, dtype=np.float64).reshape(S, 4),
        flow_in=np.array(flow_rows, dtype=np.float64).reshape(S, 2 * D),
        prev=np.array(prev_rows, dtype=np.int64),
        frame_ptr=np.array(frame_ptr, dtype=np.int64),
        frames=np.array([o.frame_index for o in frames], dtype=np.int64),
        frame_index=np.array(fi_rows, dtype=np.int64),
        track_id=np.array(tid_rows, dtype=np.int64),
        labels=np.array(lab_rows, dtype=np.float64) if labels_ok else None,
    )


def _kernel_params(params: ModelParams):
    gb, gf = params.gru_bbox, params.gru_flow
    return (
        params.theta0.W, params.theta0.b,
        np.stack([gb.W_z, gb.W_r, gb.W_h]), np.stack([gb.U_z, gb.U_r, gb.U_h]), np.stack([gb.b_z, gb.b_r, gb.b_h]),
        np.stack([gf.W_z, gf.W_r, gf.W_h]), np.stack([gf.U_z, gf.U_r, gf.U_h]), np.stack([gf.b_z, gf.b_r, gf.b_h]),
        params.w_b, params.w_f, params.theta3.W, params.theta3.b, params.theta4.W, params.theta4.b,
    )


def _grads_to_params(g):
    dW0, db0, dWb, dUb, dbb, dWf, dUf, dbf, dwb, dwf, dW3, db3, dW4, db4 = g
    return ModelParams(
        AffineParams(dW0, db0),
        GruParams(dWb[0], dWb[1], dWb[2], dUb[0], dUb[1], dUb[2], dbb[0], dbb[1], dbb[2]),
        GruParams(dWf[0], dWf[1], dWf[2], dUf[0], dUf[1], dUf[2], dbf[0], dbf[1], dbf[2]),
        dwb, dwf, AffineParams(dW3, db3), AffineParams(dW4, db4),
    )


def _flags(config):
    return bool(config.use_bbox), bool(config.use_flow), bool(config.use_attention)


def forward_packed(params, config, packed: PackedVideo) -> RiskinessTimeline:
    if packed.bbox.shape[0] == 0:
        s = al_b = al_f = np.zeros(0)
    else:
        s, al_b, al_f = kernels.forward(packed.bbox, packed.flow_in, packed.prev, packed.frame_ptr,
                                  *_kernel_params(params), *_flags(config))
    attn = config.use_attention
    return RiskinessTimeline(packed.frames, packed.frame_index, packed.track_id, s,
                             al_b if attn else None, al_f if attn else None, packed.labels)


def forward_video(params: ModelParams, config: ModelConfig, video) -> RiskinessTimeline:
    """Score every (track, frame) appearance of ``video``.

    ``video`` is a sequence of :class:`FrameObservation` or any object with a
    ``frames`` attribute holding one.
    """
    frames = getattr(video, "frames", video)
    return forward_packed(params, config, pack_video(config, frames))


def backward_packed(params, config, packed: PackedVideo, loss_weights, sample_weight=None):
    """Return ``(loss, grads, timeline)`` for a packed, fully labelled video.

    ``sample_weight`` optionally scales each appearance's loss term (e.g. 0 to
    drop post-accident frames).
    """
    w_p, w_n = _weights(loss_weights)
    if packed.labels is None:
        raise ValidationError("missing_label", "every object must carry a label for backward_video")
    if packed.bbox.shape[0] == 0:
        return 0.0, params.zeros_like(), forward_packed(params, config, packed)
    if sample_weight is None:
        sample_weight = np.ones(packed.bbox.shape[0])
    loss, s, g = kernels.forward_backward(packed.bbox, packed.flow_in, packed.prev, packed.frame_ptr,
                                          packed.labels, np.ascontiguousarray(sample_weight, dtype=np.float64),
                                          float(w_p), float(w_n),
                                          *_kernel_params(params), *_flags(config))
    timeline = RiskinessTimeline(packed.frames, packed.frame_index, packed.track_id, s, label=packed.labels)
    return float(loss), _grads_to_params(g), timeline


def backward_video(params: ModelParams, config: ModelConfig, video, loss_weights):
    """Weighted cross-entropy of one video and its exact gradient (BPTT)."""
    frames = getattr(video, "frames", video)
    packed = pack_video(config, frames, require_labels=True)
    loss, grads, _ = backward_packed(params, config, packed, loss_weights)
    return loss, grads


def _weights(loss_weights):
    if hasattr(loss_weights, "w_p"):
        return loss_weights.w_p, loss_weights.w_n
    w_p, w_n = loss_weights
    return w_p, w_n
