import json
import os
import subprocess
import sys

import numpy as np
import pytest

from amnet._backend import ENV_VAR, default_backend, numba_available

PROBE = r"""
import json, sys
import numpy as np
from amnet import _backend
from amnet.audit import TINY_CONFIG, gradient_audit, perturbed_params, random_video
from amnet.model import ModelConfig, backward_video, forward_video
cfg = ModelConfig(flow_obj_dim=8, flow_reduced_dim=4, bbox_hidden=5, flow_hidden=6, head_hidden=4,
                  track_eviction_age=2)
rng = np.random.default_rng(3)
video = random_video(rng, cfg, num_frames=15, max_objects=4, track_pool=7)
params = perturbed_params(cfg, 3)
tl = forward_video(params, cfg, video)
loss, grads = backward_video(params, cfg, video, (1.0, 0.27))
audit = gradient_audit(seeds=range(3))
json.dump({"backend": _backend.BACKEND, "score": tl.score.tolist(), "alpha_b": tl.alpha_b.tolist(),
           "loss": loss, "grads": {k: v.ravel().tolist() for k, v in grads.named_arrays().items()},
           "audit_ok": all(r.passed for r in audit)}, sys.stdout)
"""


def probe(backend):
    env = dict(os.environ, **{ENV_VAR: backend})
    out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, timeout=600)
    assert out.returncode == 0, out.stderr
    return json.loads(out.stdout)


def test_default_backend_validation(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "cuda")
    with pytest.raises(ValueError, match=ENV_VAR):
        default_backend()
    monkeypatch.setenv(ENV_VAR, "numpy")
    assert default_backend() == "numpy"


@pytest.mark.skipif(not numba_available(), reason="numba not installed")
def test_numpy_and_numba_backends_agree():
    a, b = probe("numpy"), probe("numba")
    assert (a["backend"], b["backend"]) == ("numpy", "numba")
    assert a["audit_ok"] and b["audit_ok"]
    np.testing.assert_allclose(a["score"], b["score"], rtol=0, atol=1e-13)
    np.testing.assert_allclose(a["alpha_b"], b["alpha_b"], rtol=0, atol=1e-13)
    assert abs(a["loss"] - b["loss"]) <= 1e-12 * max(1.0, abs(a["loss"]))
    for name, ga in a["grads"].items():
        np.testing.assert_allclose(ga, b["grads"][name], rtol=1e-10, atol=1e-13, err_msg=name)
