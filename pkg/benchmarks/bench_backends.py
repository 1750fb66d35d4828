"""Time forward and forward+backward on one synthetic video under each backend.

    python benchmarks/bench_backends.py [--frames 100] [--repeats 20]

Each backend runs in its own interpreter because the choice is fixed at
import time. The first (compiling) call is excluded from the timings.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from amnet import _backend
from amnet.model import ModelConfig, backward_video, forward_video, init_params
from amnet.synthdata import ScenarioConfig, generate_video

frames, repeats = int(sys.argv[1]), int(sys.argv[2])
cfg = ModelConfig()
video = generate_video(ScenarioConfig(num_frames=frames), 0)
params = init_params(cfg, 0)
t0 = time.perf_counter()
backward_video(params, cfg, video, (1.0, 0.27))
warm = time.perf_counter() - t0

def best(fn):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

fwd = best(lambda: forward_video(params, cfg, video))
bwd = best(lambda: backward_video(params, cfg, video, (1.0, 0.27)))
json.dump({"backend": _backend.BACKEND, "first_call_s": warm, "forward_ms": fwd * 1e3,
           "forward_backward_ms": bwd * 1e3}, sys.stdout)
"""


def run(backend, frames, repeats):
    env = dict(os.environ, AMNET_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", WORKER, str(frames), str(repeats)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    rows = [run(b, args.frames, args.repeats) for b in ("numpy", "numba")]
    print(f"{'backend':<8} {'first call s':>12} {'forward ms':>11} {'fwd+bwd ms':>11}")
    for r in rows:
        print(f"{r['backend']:<8} {r['first_call_s']:>12.3f} {r['forward_ms']:>11.3f} {r['forward_backward_ms']:>11.3f}")
    speed = rows[0]["forward_backward_ms"] / rows[1]["forward_backward_ms"]
    print(f"numba speedup on forward+backward: {speed:.1f}x")


if __name__ == "__main__":
    main()
