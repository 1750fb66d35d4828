"""Finite-difference audit of the analytic AM-Net gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmath import finite_diff_gradient
from .model import FrameObservation, ModelConfig, ObjectObservation, backward_video, init_params

TINY_CONFIG = ModelConfig(flow_obj_dim=8, flow_reduced_dim=4, bbox_hidden=3, flow_hidden=4, head_hidden=3,
                          track_eviction_age=1)


@dataclass
class AuditRow:
    seed: int
    group: str
    max_rel_error: float
    passed: bool


def random_video(rng, config, num_frames=4, max_objects=3, track_pool=4):
    """Small labelled video whose tracks enter, leave and re-enter."""
    D = config.flow_obj_dim
    frames = []
    labels = {tid: int(rng.integers(0, 2)) for tid in range(track_pool)}
    labels[0], labels[1] = 0, 1
    for t in range(num_frames):
        m = int(rng.integers(1, max_objects + 1))
        ids = sorted(rng.choice(track_pool, size=m, replace=False).tolist())
        objs = [ObjectObservation(tid, rng.uniform(0.0, 1.0, size=4), rng.normal(size=D), labels[tid]) for tid in ids]
        frames.append(FrameObservation(t, rng.normal(size=D), objs))
    return frames


def perturbed_params(config, seed, scale=0.3):
    params = init_params(config, seed)
    rng = np.random.default_rng([seed, 1])
    for arr in params.named_arrays().values():
        arr += rng.normal(scale=scale, size=arr.shape)
    return params


def group_errors(analytic, numeric):
    """Per parameter group: ``max|a - n| / max(max|a|, max|n|)``."""
    groups = {}
    a_leaves = analytic.named_arrays()
    for name, n in numeric.named_arrays().items():
        groups.setdefault(name.split(".")[0], []).append((a_leaves[name].ravel(), n.ravel()))
    out = {}
    for group, pairs in groups.items():
        a = np.concatenate([p[0] for p in pairs])
        n = np.concatenate([p[1] for p in pairs])
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-300)
        out[group] = float(np.max(np.abs(a - n)) / scale)
    return out


def gradient_audit(seeds=range(20), config: ModelConfig = TINY_CONFIG, step=1e-5, tol=1e-4,
                   loss_weights=(1.0, 0.27)):
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        video = random_video(rng, config)
        params = perturbed_params(config, seed)
        _, analytic = backward_video(params, config, video, loss_weights)
        numeric = finite_diff_gradient(lambda p: backward_video(p, config, video, loss_weights)[0], params, step)
        for group, err in group_errors(analytic, numeric).items():
            rows.append(AuditRow(int(seed), group, err, err < tol))
    return rows
