"""Dense float64 primitives with paired forward/backward rules.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
Every ``*_backward`` function takes the upstream gradient of a scalar loss
with respect to the forward output and returns gradients with respect to the
forward inputs and parameters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields

import numpy as np

from .errors import DomainError, NumericError, ShapeError

__all__ = [
    "AffineParams",
    "GruParams",
    "GruCache",
    "affine",
    "affine_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "softmax",
    "softmax_backward",
    "gru_cell",
    "gru_cell_forward",
    "gru_cell_backward",
    "finite_diff_gradient",
    "as_vector",
]


def as_vector(x, name="x"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


class _ParamTree:
    """Mixin for dataclasses whose fields are arrays or nested param trees."""

    def named_arrays(self, prefix=""):
        out = {}
        for fld in fields(self):
            value = getattr(self, fld.name)
            key = f"{prefix}{fld.name}"
            if isinstance(value, _ParamTree):
                out.update(value.named_arrays(prefix=key + "."))
            else:
                out[key] = value
        return out

    def copy(self):
        return copy.deepcopy(self)

    def zeros_like(self):
        new = self.copy()
        for arr in new.named_arrays().values():
            arr[...] = 0.0
        return new

    def map(self, fn):
        """Return a new tree with ``fn`` applied to every leaf array."""
        kwargs = {}
        for fld in fields(self):
            value = getattr(self, fld.name)
            kwargs[fld.name] = value.map(fn) if isinstance(value, _ParamTree) else fn(value)
        return type(self)(**kwargs)


@dataclass(eq=False)
class AffineParams(_ParamTree):
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.b.shape[0] != self.W.shape[0]:
            raise ShapeError(f"affine W {self.W.shape} incompatible with b {self.b.shape}")

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


@dataclass(eq=False)
class GruParams(_ParamTree):
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for fld in fields(self):
            setattr(self, fld.name, np.ascontiguousarray(getattr(self, fld.name), dtype=np.float64))
        hidden, inp = self.W_z.shape
        for name in ("W_z", "W_r", "W_h"):
            if getattr(self, name).shape != (hidden, inp):
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {(hidden, inp)}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {(hidden, hidden)}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"GRU {name} has shape {getattr(self, name).shape}, expected {(hidden,)}")

    @classmethod
    def zeros(cls, input_size, hidden_size):
        w = lambda: np.zeros((hidden_size, input_size))  # noqa: E731
        u = lambda: np.zeros((hidden_size, hidden_size))  # noqa: E731
        b = lambda: np.zeros(hidden_size)  # noqa: E731
        return cls(w(), w(), w(), u(), u(), u(), b(), b(), b())

    @property
    def input_size(self):
        return self.W_z.shape[1]

    @property
    def hidden_size(self):
        return self.W_z.shape[0]


def affine(x, p: AffineParams):
    """Return ``p.W @ x + p.b``."""
    x = as_vector(x)
    if x.shape[0] != p.in_dim:
        raise ShapeError(f"affine input has length {x.shape[0]}, W expects {p.in_dim} columns")
    return p.W @ x + p.b


def affine_backward(dy, x, p: AffineParams):
    """Return ``(dx, AffineParams(dW, db))`` for ``y = W x + b``."""
    dy = as_vector(dy, "dy")
    x = as_vector(x)
    return p.W.T @ dy, AffineParams(np.outer(dy, x), dy.copy())


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (np.asarray(x) > 0.0)


def sigmoid(x):
    x = np.clip(x, -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(-x))


def softmax(z):
    """Numerically stable softmax of a non-empty finite vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] == 0:
        raise DomainError("softmax requires a non-empty 1-D input")
    if not np.all(np.isfinite(z)):
        raise DomainError("softmax input contains non-finite entries")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_backward(dy, y):
    """Gradient through softmax given its output ``y``."""
    dy = np.asarray(dy, dtype=np.float64)
    return y * (dy - np.dot(y, dy))


@dataclass
class GruCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray


def _check_gru_inputs(x, h_prev, p):
    x = as_vector(x)
    h_prev = as_vector(h_prev, "h_prev")
    if x.shape[0] != p.input_size:
        raise ShapeError(f"GRU input has length {x.shape[0]}, expected {p.input_size}")
    if h_prev.shape[0] != p.hidden_size:
        raise ShapeError(f"GRU h_prev has length {h_prev.shape[0]}, expected {p.hidden_size}")
    return x, h_prev


def gru_cell_forward(x, h_prev, p: GruParams):
    """Like :func:`gru_cell` but also returns the cache needed for backward."""
    x, h_prev = _check_gru_inputs(x, h_prev, p)
    z = sigmoid(p.W_z @ x + p.U_z @ h_prev + p.b_z)
    r = sigmoid(p.W_r @ x + p.U_r @ h_prev + p.b_r)
    h_tilde = np.tanh(p.W_h @ x + p.U_h @ (r * h_prev) + p.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, GruCache(x, h_prev, z, r, h_tilde)


def gru_cell(x, h_prev, p: GruParams):
    """One GRU step.

    Update gate ``z`` blends the previous state toward the candidate:
    ``h = (1 - z) * h_prev + z * h_tilde``.
    """
    return gru_cell_forward(x, h_prev, p)[0]


def gru_cell_backward(dh, cache: GruCache, p: GruParams):
    """Return ``(dx, dh_prev, GruParams grads)``."""
    x, hp, z, r, c = cache.x, cache.h_prev, cache.z, cache.r, cache.h_tilde
    dz = dh * (c - hp)
    dc = dh * z
    dhp = dh * (1.0 - z)
    dac = dc * (1.0 - c * c)
    drh = p.U_h.T @ dac
    dr = drh * hp
    dhp = dhp + drh * r
    dar = dr * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    dhp = dhp + p.U_z.T @ daz + p.U_r.T @ dar
    dx = p.W_z.T @ daz + p.W_r.T @ dar + p.W_h.T @ dac
    grads = GruParams(
        np.outer(daz, x), np.outer(dar, x), np.outer(dac, x),
        np.outer(daz, hp), np.outer(dar, hp), np.outer(dac, r * hp),
        daz, dar, dac,
    )
    return dx, dhp, grads


def _leaves(params):
    if isinstance(params, np.ndarray):
        return {"": params}
    if hasattr(params, "named_arrays"):
        return params.named_arrays()
    if isinstance(params, dict):
        return params
    raise TypeError(f"cannot enumerate parameters of {type(params).__name__}")


def finite_diff_gradient(f, params, step=1e-5):
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``params`` may be a float, an ndarray, a dict of ndarrays, or any object
    exposing ``named_arrays()``/``copy()`` (e.g. ``ModelParams``). The result
    has the same container type, holding ``df/dparam`` entries.
    """
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    if np.isscalar(params):
        g = finite_diff_gradient(lambda a: f(float(a[0])), np.array([float(params)]), step)
        return float(g[0])

    work = params.copy() if not isinstance(params, dict) else {k: v.copy() for k, v in params.items()}
    grads = work.copy() if not isinstance(work, dict) else {k: v.copy() for k, v in work.items()}
    work_leaves = _leaves(work)
    grad_leaves = _leaves(grads)
    for name, arr in work_leaves.items():
        flat = arr.reshape(-1)
        gflat = grad_leaves[name].reshape(-1)
        for k in range(flat.shape[0]):
            orig = flat[k]
            flat[k] = orig + step
            fp = f(work)
            flat[k] = orig - step
            fm = f(work)
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective when perturbing parameter {name or 'array'}[{k}]")
            gflat[k] = float((np.longdouble(fp) - np.longdouble(fm)) / (2 * np.longdouble(step)))
    return grads
