"""``amnet`` command line: gen, train, eval, predict, gradcheck.

Settings resolve as built-in defaults < ``--config`` JSON file < flags. The
resolved settings are echoed to stderr as JSON on every run so stdout stays
machine-readable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .errors import AmnetError
from .metrics import evaluate, stratified_report
from .model import ModelConfig, forward_video
from .synthdata import ScenarioConfig, generate_dataset, read_manifest, read_video_file
from .training import LossWeights, TrainConfig, checkpoint_load, checkpoint_save, map_ordered, train

THREADS_ENV = "AMNET_THREADS"


class UsageError(Exception):
    pass


def _default_threads():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}")


DEFAULTS = {
    "gen": dict(out=None, videos=10, split=0.8, seed=0, frames=100, fps=20.0, max_objects=6,
                positive_ratio=0.27 / 1.27, feature_dim=16, delta=4.0, noise_sigma=1.0,
                ego_amplitude=0.5, dropout=0.05),
    "train": dict(manifest=None, out=None, log=None, epochs=30, lr=0.001, seed=0, val_fraction=0.2,
                  w_pos=1.0, w_neg=0.27, clip_norm=None, exclude_post_accident=False,
                  flow_reduced_dim=16, bbox_hidden=16, flow_hidden=32, head_hidden=64, eviction_age=10,
                  no_attention=False, no_bbox=False, no_obj_flow=False, no_frame_flow=False),
    "eval": dict(checkpoint=None, manifest=None, split="test", group_by=None, granularity="appearance",
                 tta_mode="all"),
    "predict": dict(checkpoint=None, video=None, out=None),
    "gradcheck": dict(seeds=20, step=1e-5, tol=1e-4),
}
REQUIRED = {"gen": ("out",), "train": ("manifest", "out"), "eval": ("checkpoint", "manifest"),
            "predict": ("checkpoint", "video"), "gradcheck": ()}


def build_parser():
    parser = argparse.ArgumentParser(prog="amnet", description="AM-Net risky object localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of settings (flag names with '_' for '-')")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")

    g = sub.add_parser("gen", help="generate a synthetic dataset and manifest")
    common(g)
    g.add_argument("--out", help="output directory")
    g.add_argument("--videos", type=int)
    g.add_argument("--split", type=float, help="fraction of videos assigned to train")
    g.add_argument("--seed", type=int)
    g.add_argument("--frames", type=int)
    g.add_argument("--fps", type=float)
    g.add_argument("--max-objects", type=int)
    g.add_argument("--positive-ratio", type=float)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--delta", type=float, help="distance between risky and non-risky flow means")
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--ego-amplitude", type=float)
    g.add_argument("--dropout", type=float, help="per-appearance detection miss probability")

    t = sub.add_parser("train", help="train a model on the train split of a manifest")
    common(t)
    t.add_argument("--manifest")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="per-epoch JSON-lines log (default: <out>.log.jsonl)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--w-pos", type=float)
    t.add_argument("--w-neg", type=float)
    t.add_argument("--clip-norm", type=float)
    t.add_argument("--exclude-post-accident", action="store_true", default=None)
    t.add_argument("--flow-reduced-dim", type=int)
    t.add_argument("--bbox-hidden", type=int)
    t.add_argument("--flow-hidden", type=int)
    t.add_argument("--head-hidden", type=int)
    t.add_argument("--eviction-age", type=int)
    t.add_argument("--no-attention", action="store_true", default=None,
                   help="ablation variant without attention: hidden states feed back unweighted")
    t.add_argument("--no-bbox", action="store_true", default=None,
                   help="ablation variant with flow features only (bbox stream zeroed)")
    t.add_argument("--no-obj-flow", action="store_true", default=None,
                   help="ablation variant with bbox and frame-level flow (object flow zeroed)")
    t.add_argument("--no-frame-flow", action="store_true", default=None,
                   help="ablation variant with bbox and object-level flow (frame flow zeroed)")

    e = sub.add_parser("eval", help="print a metrics report for one manifest split")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--split", choices=("train", "test"))
    e.add_argument("--group-by", help="tag name for a stratified report, e.g. manner_of_collision")
    e.add_argument("--granularity", choices=("appearance", "track"))
    e.add_argument("--tta-mode", choices=("all", "risky"))

    pr = sub.add_parser("predict", help="write per-frame per-track scores as CSV")
    common(pr)
    pr.add_argument("--checkpoint")
    pr.add_argument("--video")
    pr.add_argument("--out", help="CSV path (default stdout)")

    gc = sub.add_parser("gradcheck", help="finite-difference audit of the analytic gradients")
    common(gc)
    gc.add_argument("--seeds", type=int)
    gc.add_argument("--step", type=float)
    gc.add_argument("--tol", type=float)
    return parser


def resolve(args):
    """Merge defaults < config file < explicit flags."""
    cmd = args.command
    settings = dict(DEFAULTS[cmd])
    settings["threads"] = _default_threads()
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {args.config}: {exc}")
        if not isinstance(from_file, dict):
            raise UsageError(f"--config {args.config}: must hold a JSON object")
        unknown = set(from_file) - set(settings)
        if unknown:
            raise UsageError(f"--config {args.config}: unknown keys {sorted(unknown)} for '{cmd}'")
        settings.update(from_file)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[key] = value
    missing = [k for k in REQUIRED[cmd] if settings.get(k) is None]
    if missing:
        raise UsageError(f"'{cmd}' requires " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return settings


def _echo(settings):
    print(json.dumps({"resolved_config": settings}, sort_keys=True), file=sys.stderr)


def cmd_gen(s):
    cfg = ScenarioConfig(num_frames=s["frames"], fps=s["fps"], max_objects=s["max_objects"],
                         positive_ratio=s["positive_ratio"], feature_dim=s["feature_dim"], delta=s["delta"],
                         noise_sigma=s["noise_sigma"], ego_motion_amplitude=s["ego_amplitude"],
                         dropout=s["dropout"], seed=s["seed"])
    manifest = generate_dataset(cfg, s["videos"], s["split"], s["out"])
    print(json.dumps({"manifest": str(Path(s["out"]) / "manifest.json"), "videos": len(manifest.entries),
                      "train": len(manifest.split("train")), "test": len(manifest.split("test"))}, sort_keys=True))
    return 0


def model_config_from(s, feature_dim):
    return ModelConfig(
        flow_obj_dim=feature_dim, flow_reduced_dim=s["flow_reduced_dim"], bbox_hidden=s["bbox_hidden"],
        flow_hidden=s["flow_hidden"], head_hidden=s["head_hidden"], use_bbox=not s["no_bbox"],
        use_obj_flow=not s["no_obj_flow"], use_frame_flow=not s["no_frame_flow"],
        use_attention=not s["no_attention"], track_eviction_age=s["eviction_age"],
    )


def train_config_from(s):
    return TrainConfig(learning_rate=s["lr"], epochs=s["epochs"], loss_weights=LossWeights(s["w_pos"], s["w_neg"]),
                       seed=s["seed"], validation_fraction=s["val_fraction"], gradient_clip_norm=s["clip_norm"],
                       exclude_post_accident=bool(s["exclude_post_accident"]), threads=s["threads"])


def cmd_train(s):
    manifest = read_manifest(s["manifest"])
    videos = manifest.load("train")
    if not videos:
        raise AmnetError(f"{s['manifest']}: train split is empty")
    dim = videos[0].frames[0].frame_flow.shape[0]
    mc = model_config_from(s, dim)
    tc = train_config_from(s)
    log_path = Path(s["log"] or (str(s["out"]) + ".log.jsonl"))
    with log_path.open("w") as fh:
        def on_epoch(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            print(json.dumps(rec, sort_keys=True), file=sys.stderr)

        ckpt = train(videos, mc, tc, on_epoch=on_epoch)
    checkpoint_save(ckpt, s["out"])
    print(json.dumps({"checkpoint": str(s["out"]), "epoch": ckpt.epoch, "val_auc": ckpt.val_auc}, sort_keys=True))
    return 0


def cmd_eval(s):
    ckpt = checkpoint_load(s["checkpoint"])
    videos = read_manifest(s["manifest"]).load(s["split"])
    timelines = map_ordered(lambda v: forward_video(ckpt.params, ckpt.model_config, v), videos, s["threads"])
    kwargs = dict(granularity=s["granularity"], risky_only_tta=s["tta_mode"] == "risky")
    if s["group_by"]:
        report = stratified_report(videos, timelines, s["group_by"], **kwargs)
    else:
        report = evaluate(videos, timelines, **kwargs)
    print(report.to_json())
    return 0


def cmd_predict(s):
    ckpt = checkpoint_load(s["checkpoint"])
    video = read_video_file(s["video"])
    tl = forward_video(ckpt.params, ckpt.model_config, video)
    fh = open(s["out"], "w", newline="") if s["out"] else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "frame", "track_id", "score", "label"])
        labels = tl.label if tl.label is not None else [None] * len(tl.score)
        for f, tid, score, lab in zip(tl.frame_index, tl.track_id, tl.score, labels):
            w.writerow([video.video_id, int(f), int(tid), repr(float(score)), "" if lab is None else int(lab)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_gradcheck(s):
    from .audit import gradient_audit

    rows = gradient_audit(seeds=range(s["seeds"]), step=s["step"], tol=s["tol"])
    worst = {}
    for r in rows:
        worst[r.group] = max(worst.get(r.group, 0.0), r.max_rel_error)
    print(f"{'group':<10} {'max_rel_error':>14}  status")
    for group, err in worst.items():
        print(f"{group:<10} {err:>14.3e}  {'PASS' if err < s['tol'] else 'FAIL'}")
    ok = all(r.passed for r in rows)
    print(f"{len(rows)} checks over {s['seeds']} seeds: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "gradcheck": cmd_gradcheck}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = resolve(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"amnet: error: {exc}", file=sys.stderr)
        return 2
    _echo(settings)
    try:
        return COMMANDS[args.command](settings)
    except (AmnetError, OSError, ArithmeticError) as exc:
        print(f"amnet {args.command}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
