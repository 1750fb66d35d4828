from pathlib import Path

import numpy as np
import pytest

from amnet.model import FrameObservation, ModelConfig, ObjectObservation

DATA = Path(__file__).parent / "data"

SMALL = ModelConfig(flow_obj_dim=6, flow_reduced_dim=4, bbox_hidden=3, flow_hidden=4, head_hidden=3)


def make_video(rng, config=SMALL, num_frames=5, max_objects=3, track_pool=5, labelled=True):
    D = config.flow_obj_dim
    frames = []
    for t in range(num_frames):
        m = int(rng.integers(0, max_objects + 1))
        ids = rng.choice(track_pool, size=m, replace=False).tolist()
        objs = [ObjectObservation(tid, rng.uniform(size=4), rng.normal(size=D),
                                  int(tid % 2) if labelled else None) for tid in ids]
        frames.append(FrameObservation(t, rng.normal(size=D), objs))
    return frames


@pytest.fixture
def fixture_path():
    return DATA / "two_frame_video.json"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_acceptance(name, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
