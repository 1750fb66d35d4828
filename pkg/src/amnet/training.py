"""Weighted cross-entropy training with Adam, plateau LR decay and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointVersionError,
    ShapeError,
    ValidationError,
)
from .kernels import LOG_CLAMP
from .metrics import auc_from_arrays
from .model import (
    ModelConfig,
    ModelParams,
    backward_packed,
    expected_param_shapes,
    forward_packed,
    init_params,
    pack_video,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LossWeights:
    w_p: float = 1.0
    w_n: float = 0.27

    def __post_init__(self):
        if self.w_p < 0 or self.w_n < 0 or (self.w_p == 0 and self.w_n == 0):
            raise ValidationError("loss_weights", f"class weights must be >= 0 and not both zero, got {self}")


def weighted_ce_loss(scores, labels, weights: LossWeights = LossWeights()):
    """Sum over samples of ``-(w_p l log s + w_n (1-l) log(1-s))`` with s clamped to [1e-7, 1-1e-7]."""
    s = np.clip(np.asarray(scores, dtype=np.float64), LOG_CLAMP, 1.0 - LOG_CLAMP)
    lab = np.asarray(labels)
    if lab.shape != s.shape:
        raise ShapeError(f"{s.shape[0]} scores but {lab.shape[0]} labels")
    if not np.all((lab == 0) | (lab == 1)):
        raise ValidationError("label_value", "labels must be 0 or 1")
    lab = lab.astype(np.float64)
    terms = weights.w_p * lab * np.log(s) + weights.w_n * (1.0 - lab) * np.log(1.0 - s)
    return float(-np.sum(terms))


# -- Adam -------------------------------------------------------------------------


@dataclass
class AdamState:
    m: object
    v: object
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params, **hyper):
        zeros = params.zeros_like() if hasattr(params, "zeros_like") else np.zeros_like(params)
        zeros2 = params.zeros_like() if hasattr(params, "zeros_like") else np.zeros_like(params)
        return cls(zeros, zeros2, **hyper)


def _leaves(tree):
    return tree.named_arrays() if hasattr(tree, "named_arrays") else {"": tree}


def adam_step(params, grads, state: AdamState, lr: float):
    """Return ``(new_params, new_state)``; inputs are left untouched."""
    if lr <= 0:
        raise ValidationError("learning_rate", f"lr must be positive, got {lr}")
    new_params = params.copy()
    new_state = AdamState(state.m.copy(), state.v.copy(), state.step_count + 1,
                          state.beta1, state.beta2, state.epsilon)
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    t = new_state.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    P, G, Mm, V = _leaves(new_params), _leaves(grads), _leaves(new_state.m), _leaves(new_state.v)
    for name, p in P.items():
        g = G[name]
        if g.shape != p.shape or Mm[name].shape != p.shape:
            raise ShapeError(f"adam: {name or 'params'} has shape {p.shape}, gradient {g.shape}")
        m = Mm[name]
        v = V[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return new_params, new_state


# -- plateau scheduler ------------------------------------------------------------


@dataclass(frozen=True)
class PlateauState:
    current_lr: float
    best_metric: float = -math.inf
    epochs_since_improve: int = 0
    factor: float = 0.1
    patience: int = 3
    min_lr: float = 0.0
    threshold: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValidationError("plateau_factor", "factor must lie in (0, 1)")
        if self.current_lr < self.min_lr:
            raise ValidationError("plateau_lr", "current_lr must be >= min_lr")


def plateau_step(state: PlateauState, epoch_metric: float, mode="max") -> PlateauState:
    """Decay the learning rate after more than ``patience`` epochs without improvement."""
    metric = epoch_metric if mode == "max" else -epoch_metric
    best = state.best_metric if mode == "max" else -state.best_metric
    if metric > best + state.threshold:
        return replace(state, best_metric=epoch_metric, epochs_since_improve=0)
    count = state.epochs_since_improve + 1
    lr = state.current_lr
    if count > state.patience:
        lr = max(lr * state.factor, state.min_lr)
        count = 0
    return replace(state, epochs_since_improve=count, current_lr=lr)


# -- training loop ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 30
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    validation_fraction: float = 0.2
    gradient_clip_norm: Optional[float] = None
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    min_lr: float = 0.0
    exclude_post_accident: bool = False
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))
        if self.epochs < 0:
            raise ValidationError("epochs", "epochs must be >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction", "validation_fraction must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate", "learning_rate must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError("config_key", f"unknown train_config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    train_config: TrainConfig
    epoch: int
    val_auc: Optional[float]
    format_version: int = CHECKPOINT_VERSION
    history: list = field(default_factory=list)


def split_dataset(dataset, validation_fraction, seed):
    """Deterministic ``(train, validation)`` split of a list of videos."""
    n = len(dataset)
    n_val = int(round(validation_fraction * n))
    n_val = min(n_val, n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [v for i, v in enumerate(dataset) if i not in val_idx]
    val = [v for i, v in enumerate(dataset) if i in val_idx]
    return train, val


def map_ordered(fn, items, threads=1):
    """``[fn(x) for x in items]``, optionally on a thread pool; output order is preserved."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sample_weight(video, packed, exclude_post_accident):
    if not exclude_post_accident or video.accident_frame is None:
        return None
    return (packed.frame_index <= video.accident_frame).astype(np.float64)


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.named_arrays().values()))
    if total > max_norm:
        scale = max_norm / total
        grads = grads.map(lambda g: g * scale)
    return grads


def _pooled_auc(params, config, packed_list, threads):
    timelines = map_ordered(lambda p: forward_packed(params, config, p), packed_list, threads)
    if not timelines:
        return None, timelines
    scores = np.concatenate([tl.score for tl in timelines])
    labels = np.concatenate([tl.label for tl in timelines])
    return auc_from_arrays(scores, labels), timelines


def _validation_loss(timelines, weights):
    return sum(weighted_ce_loss(tl.score, tl.label, weights) for tl in timelines)


def train(dataset, model_config: ModelConfig, train_config: TrainConfig,
          on_epoch: Optional[Callable[[dict], None]] = None) -> Checkpoint:
    """Fit AM-Net with one Adam step per video; return the best-validation checkpoint.

    The monitored metric is pooled validation object AUC. If the validation
    split is empty the training-pass AUC is used; if AUC is undefined (a single
    class) the negative validation loss is used instead.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("empty_dataset", "training needs at least one video")
    tc = train_config
    params = init_params(model_config, tc.seed)
    train_set, val_set = split_dataset(dataset, tc.validation_fraction, tc.seed)
    packed_train = [pack_video(model_config, v.frames, require_labels=True) for v in train_set]
    packed_val = [pack_video(model_config, v.frames, require_labels=True) for v in val_set]
    weights_train = [_sample_weight(v, p, tc.exclude_post_accident) for v, p in zip(train_set, packed_train)]

    best = Checkpoint(model_config, params.copy(), tc, 0, None)
    if tc.epochs == 0:
        if packed_val:
            best.val_auc = _pooled_auc(params, model_config, packed_val, tc.threads)[0]
        return best

    adam = AdamState.fresh(params)
    sched = PlateauState(current_lr=tc.learning_rate, factor=tc.plateau_factor,
                         patience=tc.plateau_patience, min_lr=min(tc.min_lr, tc.learning_rate))
    best_metric = -math.inf
    history = []
    for epoch in range(1, tc.epochs + 1):
        order = np.random.default_rng([tc.seed, epoch]).permutation(len(packed_train))
        losses = []
        train_scores, train_labels = [], []
        for i in order.tolist():
            loss, grads, tl = backward_packed(params, model_config, packed_train[i], tc.loss_weights,
                                              weights_train[i])
            if tc.gradient_clip_norm is not None:
                grads = _clip(grads, tc.gradient_clip_norm)
            params, adam = adam_step(params, grads, adam, sched.current_lr)
            losses.append(loss)
            train_scores.append(tl.score)
            train_labels.append(tl.label)
        train_loss = float(np.mean(losses))
        if packed_val:
            val_auc, val_tls = _pooled_auc(params, model_config, packed_val, tc.threads)
            val_loss = _validation_loss(val_tls, tc.loss_weights) / len(val_tls)
        else:
            val_auc = auc_from_arrays(np.concatenate(train_scores), np.concatenate(train_labels))
            val_loss = train_loss
        metric = val_auc if val_auc is not None else -val_loss
        record = {"epoch": epoch, "train_loss": train_loss, "val_auc": val_auc, "val_loss": val_loss,
                  "lr": sched.current_lr}
        sched = plateau_step(sched, metric, mode="max")
        if metric > best_metric:
            best_metric = metric
            best = Checkpoint(model_config, params.copy(), tc, epoch, val_auc)
        history.append(record)
        log.info("epoch %d train_loss=%.6f val_auc=%s lr=%.3g", epoch, train_loss, val_auc, record["lr"])
        if on_epoch is not None:
            on_epoch(record)
    best.history = history
    return best


# -- checkpoint persistence -------------------------------------------------------


def checkpoint_to_dict(ckpt: Checkpoint):
    return {
        "format_version": ckpt.format_version,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "epoch": ckpt.epoch,
        "val_auc": ckpt.val_auc,
        "params": {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
                   for name, arr in ckpt.params.named_arrays().items()},
    }


def checkpoint_save(ckpt: Checkpoint, path):
    text = json.dumps(checkpoint_to_dict(ckpt), sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def checkpoint_load(path) -> Checkpoint:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: cannot parse checkpoint ({exc})") from exc
    if not isinstance(d, dict):
        raise CheckpointFormatError(f"{path}: checkpoint must be a JSON object")
    required = ("format_version", "model_config", "train_config", "epoch", "val_auc", "params")
    missing = [k for k in required if k not in d]
    if missing:
        raise CheckpointFormatError(f"{path}: missing keys {missing}")
    if d["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version {d['format_version']!r}, expected {CHECKPOINT_VERSION}")
    try:
        mc = ModelConfig.from_dict(d["model_config"])
        tc = TrainConfig.from_dict(d["train_config"])
    except (TypeError, ValidationError) as exc:
        raise CheckpointFormatError(f"{path}: bad config ({exc})") from exc

    expected = expected_param_shapes(mc)
    raw = d["params"]
    if set(raw) != set(expected):
        raise CheckpointShapeError(f"{path}: parameter names {sorted(set(raw) ^ set(expected))} do not match config")
    arrays = {}
    for name, shape in expected.items():
        entry = raw[name]
        try:
            declared = tuple(int(s) for s in entry["shape"])
            data = np.array(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"{path}: malformed tensor {name} ({exc})") from exc
        if declared != shape:
            raise CheckpointShapeError(f"{path}: {name} declared shape {declared}, config implies {shape}")
        if data.size != int(np.prod(shape)):
            raise CheckpointShapeError(f"{path}: {name} holds {data.size} values, shape {shape} needs {int(np.prod(shape))}")
        arrays[name] = data.reshape(shape)
    return Checkpoint(mc, ModelParams.from_named_arrays(arrays), tc, int(d["epoch"]), d["val_auc"])
