"""From-scratch classifiers for tick windows: linear, MLP, LSTM and LSTM+attention.

All arithmetic is float64 numpy.  Parameters are plain ``dict[str, ndarray]``
keyed by name; gradients use the same keys.  Every forward pass is a pure
function of (params, inputs).

LSTM gates carry two bias vectors each, one on the input side and one on
the recurrent side, so an ``L``-layer stack of ``H`` units on ``F`` inputs holds
``4 * (H * (F + H) + 2 * H)`` parameters in its first layer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

ARCHITECTURES = ("lm", "mlp", "lstm", "attention")
GATES = ("i", "o", "f", "c")
N_CLASSES = 3
LAYER_GRID = (1, 2, 3)
UNIT_GRID = (32, 64, 128)
CHECKPOINT_SCHEMA_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or infinity."""


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    lookback: int = 50
    n_features: int = 6
    layers: int = 1
    units: int = 64
    n_classes: int = N_CLASSES
    activation: str = "relu"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if min(self.lookback, self.n_features, self.n_classes) < 1:
            raise ValueError("lookback, n_features and n_classes must be positive")
        if self.arch != "lm" and (self.layers < 1 or self.units < 1):
            raise ValueError("layers and units must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_search_space(self) -> bool:
        return self.arch == "lm" or (self.layers in LAYER_GRID and self.units in UNIT_GRID)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


# -- activations -------------------------------------------------------------

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z, a):
    return 1.0 - a * a


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: np.ndarray, classes) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and the softmax probabilities.

    ``logits`` may be a single (C,) vector or a (B, C) batch.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(len(y)), y] - log_z
    probs = np.exp(shifted - log_z[:, None])
    return float(-log_p.mean()), probs


# -- parameter layout --------------------------------------------------------

def param_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    flat = spec.lookback * spec.n_features
    H = spec.units
    if spec.arch == "lm":
        readout_in = flat
    elif spec.arch == "mlp":
        fan_in = flat
        for l in range(1, spec.layers + 1):
            shapes[f"dense{l}.W"] = (H, fan_in)
            shapes[f"dense{l}.b"] = (H,)
            fan_in = H
        readout_in = H
    else:
        fan_in = spec.n_features
        for l in range(1, spec.layers + 1):
            for g in GATES:
                shapes[f"lstm{l}.W_{g}h"] = (H, H)
                shapes[f"lstm{l}.W_{g}x"] = (H, fan_in)
                shapes[f"lstm{l}.b_{g}x"] = (H,)
                shapes[f"lstm{l}.b_{g}h"] = (H,)
            fan_in = H
        if spec.arch == "attention":
            shapes["attn.v"] = (H,)
            shapes["attn.W_h"] = (H, H)
            shapes["attn.W_c"] = (H, 2 * H)
        readout_in = H
    shapes["out.W"] = (spec.n_classes, readout_in)
    shapes["out.b"] = (spec.n_classes,)
    return shapes


def param_count(spec: ModelSpec) -> int:
    return int(sum(np.prod(s) for s in param_shapes(spec).values()))


def init_params(spec: ModelSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(spec).items():
        short = name.split(".")[1]
        if short.startswith("b"):
            params[name] = np.zeros(shape)
            continue
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def zero_params(spec: ModelSpec) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_shapes(spec).items()}


def _check_input(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != (spec.lookback, spec.n_features):
        raise ValueError(f"input shape {X.shape[1:]} does not match model "
                         f"({spec.lookback}, {spec.n_features})")
    return X


def _finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")


# -- MLP / linear --------------------------------------------------------------

def forward_mlp(spec: ModelSpec, params: dict, X: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
    """Logits of the flattened-window network (``lm`` has no hidden layer)."""
    X = _check_input(spec, X)
    act = _ACTIVATIONS[spec.activation][0]
    h = X.reshape(len(X), -1)
    acts = [(None, h)]
    n_hidden = 0 if spec.arch == "lm" else spec.layers
    for l in range(1, n_hidden + 1):
        z = h @ params[f"dense{l}.W"].T + params[f"dense{l}.b"]
        h = act(z)
        acts.append((z, h))
    logits = h @ params["out.W"].T + params["out.b"]
    _finite("mlp forward", logits)
    if cache is not None:
        cache["acts"] = acts
    return logits


def _backward_mlp(spec: ModelSpec, params: dict, cache: dict, dlogits: np.ndarray) -> dict:
    grad_fn = _ACTIVATIONS[spec.activation][1]
    acts = cache["acts"]
    grads = {}
    h = acts[-1][1]
    grads["out.W"] = dlogits.T @ h
    grads["out.b"] = dlogits.sum(axis=0)
    dh = dlogits @ params["out.W"]
    for l in range(len(acts) - 1, 0, -1):
        z, a = acts[l]
        dz = dh * grad_fn(z, a)
        h_prev = acts[l - 1][1]
        grads[f"dense{l}.W"] = dz.T @ h_prev
        grads[f"dense{l}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"dense{l}.W"]
    return grads


# -- LSTM ----------------------------------------------------------------------

def _stack_layer(params: dict, l: int):
    Wx = np.concatenate([params[f"lstm{l}.W_{g}x"] for g in GATES], axis=0)
    Wh = np.concatenate([params[f"lstm{l}.W_{g}h"] for g in GATES], axis=0)
    b = np.concatenate([params[f"lstm{l}.b_{g}x"] + params[f"lstm{l}.b_{g}h"] for g in GATES])
    return Wx, Wh, b


def _lstm_layer(Wx, Wh, b, X):
    """One layer over time-major input X of shape (T, B, F)."""
    T, B, _ = X.shape
    H = Wh.shape[1]
    Zx = X @ Wx.T + b
    WhT = Wh.T
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    tcs = np.empty((T, B, H))
    gates = np.empty((T, B, 4 * H))
    for t in range(T):
        g = gates[t]
        np.matmul(hs[t], WhT, out=g)
        g += Zx[t]
        g[:, :3 * H] = sigmoid(g[:, :3 * H])
        np.tanh(g[:, 3 * H:], out=g[:, 3 * H:])
        i, o, f, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        c = cs[t + 1]
        np.multiply(f, cs[t], out=c)
        c += i * cand
        np.tanh(c, out=tcs[t])
        np.multiply(o, tcs[t], out=hs[t + 1])
    _finite("lstm forward", hs[-1], cs[-1])
    return hs[1:], (X, hs, cs, tcs, gates, Wx, Wh)


def _lstm_layer_backward(layer_cache, dH):
    """Backpropagation through time; ``dH`` is time-major (T, B, H)."""
    X, hs, cs, tcs, gates, Wx, Wh = layer_cache
    T, B, H = dH.shape
    dZ = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, o, f, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = tcs[t]
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dZ[t]
        dz[:, :H] = dc * cand * i * (1.0 - i)
        dz[:, H:2 * H] = dh * tc * o * (1.0 - o)
        dz[:, 2 * H:3 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = dz @ Wh
    flat = dZ.reshape(T * B, 4 * H)
    dWx = flat.T @ X.reshape(T * B, -1)
    dWh = flat.T @ hs[:-1].reshape(T * B, H)
    db = flat.sum(axis=0)
    dX = dZ @ Wx
    return dWx, dWh, db, dX


def _lstm_stack(spec: ModelSpec, params: dict, X: np.ndarray):
    layer_caches = []
    h = np.ascontiguousarray(X.transpose(1, 0, 2))
    for l in range(1, spec.layers + 1):
        Wx, Wh, b = _stack_layer(params, l)
        h, lc = _lstm_layer(Wx, Wh, b, h)
        layer_caches.append(lc)
    return np.ascontiguousarray(h.transpose(1, 0, 2)), layer_caches


def _lstm_stack_backward(spec: ModelSpec, layer_caches, dH) -> dict:
    grads = {}
    H = spec.units
    dH = np.ascontiguousarray(dH.transpose(1, 0, 2))
    for l in range(spec.layers, 0, -1):
        dWx, dWh, db, dH = _lstm_layer_backward(layer_caches[l - 1], dH)
        for k, g in enumerate(GATES):
            sl = slice(k * H, (k + 1) * H)
            grads[f"lstm{l}.W_{g}x"] = dWx[sl]
            grads[f"lstm{l}.W_{g}h"] = dWh[sl]
            grads[f"lstm{l}.b_{g}x"] = db[sl]
            grads[f"lstm{l}.b_{g}h"] = db[sl].copy()
    return grads


def forward_lstm(spec: ModelSpec, params: dict, X: np.ndarray,
                 cache: Optional[dict] = None) -> tuple[np.ndarray, np.ndarray]:
    """Top-layer hidden states h_1..h_T and logits read out from h_T."""
    X = _check_input(spec, X)
    hs, layer_caches = _lstm_stack(spec, params, X)
    logits = hs[:, -1] @ params["out.W"].T + params["out.b"]
    _finite("lstm readout", logits)
    if cache is not None:
        cache["layers"] = layer_caches
        cache["hs"] = hs
    return hs, logits


def _backward_lstm(spec: ModelSpec, params: dict, cache: dict, dlogits: np.ndarray) -> dict:
    hs = cache["hs"]
    grads = {"out.W": dlogits.T @ hs[:, -1], "out.b": dlogits.sum(axis=0)}
    dH = np.zeros_like(hs)
    dH[:, -1] = dlogits @ params["out.W"]
    grads.update(_lstm_stack_backward(spec, cache["layers"], dH))
    return grads


# -- attention -------------------------------------------------------------------

def attend(params: dict, hs: np.ndarray):
    """Score, weight and combine hidden states; returns (a_T, weights, context)."""
    U = np.tanh(hs @ params["attn.W_h"].T)
    e = U @ params["attn.v"]
    w = softmax(e, axis=1)
    context = np.einsum("bt,bth->bh", w, hs)
    joint = np.concatenate([context, hs[:, -1]], axis=1)
    a = np.tanh(joint @ params["attn.W_c"].T)
    return a, w, context, (U, joint)


def forward_attention(spec: ModelSpec, params: dict, X: np.ndarray,
                      cache: Optional[dict] = None) -> np.ndarray:
    X = _check_input(spec, X)
    hs, layer_caches = _lstm_stack(spec, params, X)
    a, w, context, (U, joint) = attend(params, hs)
    logits = a @ params["out.W"].T + params["out.b"]
    _finite("attention forward", logits)
    if cache is not None:
        cache.update(layers=layer_caches, hs=hs, a=a, w=w, U=U, joint=joint)
    return logits


def _backward_attention(spec: ModelSpec, params: dict, cache: dict, dlogits: np.ndarray) -> dict:
    H = spec.units
    hs, a, w, U, joint = cache["hs"], cache["a"], cache["w"], cache["U"], cache["joint"]
    grads = {"out.W": dlogits.T @ a, "out.b": dlogits.sum(axis=0)}
    dpre = (dlogits @ params["out.W"]) * (1.0 - a * a)
    grads["attn.W_c"] = dpre.T @ joint
    djoint = dpre @ params["attn.W_c"]
    dcontext, dhT = djoint[:, :H], djoint[:, H:]
    dH = w[:, :, None] * dcontext[:, None, :]
    dH[:, -1] += dhT
    dw = np.einsum("bth,bh->bt", hs, dcontext)
    de = w * (dw - (w * dw).sum(axis=1, keepdims=True))
    grads["attn.v"] = np.einsum("bt,bth->h", de, U)
    dU_pre = de[:, :, None] * params["attn.v"] * (1.0 - U * U)
    grads["attn.W_h"] = dU_pre.reshape(-1, H).T @ hs.reshape(-1, H)
    dH += dU_pre @ params["attn.W_h"]
    grads.update(_lstm_stack_backward(spec, cache["layers"], dH))
    return grads


# -- dispatch ----------------------------------------------------------------------

def forward(spec: ModelSpec, params: dict, X: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
    """Class logits for a batch of windows, any architecture."""
    if spec.arch in ("lm", "mlp"):
        return forward_mlp(spec, params, X, cache)
    if spec.arch == "lstm":
        return forward_lstm(spec, params, X, cache)[1]
    return forward_attention(spec, params, X, cache)


def predict_proba(spec: ModelSpec, params: dict, X: np.ndarray) -> np.ndarray:
    return softmax(forward(spec, params, X))


def loss(spec: ModelSpec, params: dict, X: np.ndarray, y) -> float:
    return cross_entropy(forward(spec, params, X), y)[0]


_BACKWARD = {"lm": _backward_mlp, "mlp": _backward_mlp,
             "lstm": _backward_lstm, "attention": _backward_attention}


def loss_and_gradients(spec: ModelSpec, params: dict, X: np.ndarray, y) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its exact gradient per tensor."""
    cache: dict = {}
    logits = forward(spec, params, X, cache)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    value, probs = cross_entropy(logits, y)
    dlogits = probs
    dlogits[np.arange(len(y)), y] -= 1.0
    dlogits /= len(y)
    grads = _BACKWARD[spec.arch](spec, params, cache, dlogits)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    return value, {name: grads[name] for name in params}


def gradients(spec: ModelSpec, params: dict, X: np.ndarray, y) -> dict:
    return loss_and_gradients(spec, params, X, y)[1]


# -- gradient oracle ----------------------------------------------------------------
#
# The numeric side of the check runs through an independent forward pass in
# extended precision.  Each call evaluates many perturbed copies of a single
# tensor at once: a perturbed tensor carries a leading copy axis ``P`` and
# broadcasts against the shared ones.

def _ref_linear(h, W, b=None):
    """h (P, B, n) times W^T, with W of shape (out, n) or (P, out, n)."""
    out = h @ np.swapaxes(W, -1, -2)
    if b is not None:
        out = out + (b[:, None, :] if b.ndim == 2 else b)
    return out


def _ref_logits(spec: ModelSpec, p: dict, X: np.ndarray) -> np.ndarray:
    act = {"relu": lambda z: np.maximum(z, 0), "tanh": np.tanh}[spec.activation]
    B, T, F = X.shape[1:]
    if spec.arch in ("lm", "mlp"):
        h = X.reshape(X.shape[0], B, T * F)
        for l in range(1, (0 if spec.arch == "lm" else spec.layers) + 1):
            h = act(_ref_linear(h, p[f"dense{l}.W"], p[f"dense{l}.b"]))
        return _ref_linear(h, p["out.W"], p["out.b"])
    seq = [X[:, :, t] for t in range(T)]
    for l in range(1, spec.layers + 1):
        P = max(s.shape[0] for s in seq)
        h = np.zeros((P, B, spec.units), dtype=X.dtype)
        c = np.zeros_like(h)
        out = []
        for x in seq:
            pre = {g: _ref_linear(x, p[f"lstm{l}.W_{g}x"], p[f"lstm{l}.b_{g}x"])
                   + _ref_linear(h, p[f"lstm{l}.W_{g}h"], p[f"lstm{l}.b_{g}h"]) for g in GATES}
            i, o, f = (1 / (1 + np.exp(-pre[g])) for g in "iof")
            c = f * c + i * np.tanh(pre["c"])
            h = o * np.tanh(c)
            out.append(h)
        seq = out
    h_last = seq[-1]
    if spec.arch == "lstm":
        return _ref_linear(h_last, p["out.W"], p["out.b"])
    v = p["attn.v"]
    v = v[:, None, :] if v.ndim == 2 else v
    scores = np.stack([(np.tanh(_ref_linear(h, p["attn.W_h"])) * v).sum(-1) for h in seq], axis=-1)
    scores = np.exp(scores - scores.max(-1, keepdims=True))
    weights = scores / scores.sum(-1, keepdims=True)
    context = sum(weights[..., t, None] * seq[t] for t in range(T))
    a = np.tanh(_ref_linear(np.concatenate(np.broadcast_arrays(context, h_last), axis=-1), p["attn.W_c"]))
    return _ref_linear(a, p["out.W"], p["out.b"])


def _ref_losses(spec: ModelSpec, p: dict, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean cross-entropy for each copy, shape (P,)."""
    z = _ref_logits(spec, p, X)
    z = z - z.max(-1, keepdims=True)
    log_z = np.log(np.exp(z).sum(-1))
    picked = np.take_along_axis(z, np.broadcast_to(y[None, :, None], z.shape[:2] + (1,)), -1)[..., 0]
    return (log_z - picked).mean(-1)


def finite_diff_check(spec: ModelSpec, seed: int = 0, epsilon: float = 1e-6,
                      coords_per_tensor: int = 200, batch: int = 2,
                      precision: str = "extended", chunk: int = 64) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Coordinates are sampled without replacement (all of them when a tensor has
    fewer than ``coords_per_tensor`` entries).  The relative error uses the
    denominator ``max(|analytic|, |numeric|, 1e-8)``.  Parameters and the
    analytic gradient are float64; ``precision`` selects the arithmetic of the
    two perturbed loss evaluations: "extended" (``np.longdouble``) or "float64".
    At ``epsilon = 1e-6`` float64 round-off alone leaves an absolute error near
    1e-10 on the difference quotient, which swamps small gradient entries.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    dtype = {"extended": np.longdouble, "float64": np.float64}[precision]
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    # non-zero biases so that every path carries gradient
    for name, p in params.items():
        if name.split(".")[1].startswith("b"):
            p[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    X = rng.standard_normal((batch, spec.lookback, spec.n_features))
    y = rng.integers(0, spec.n_classes, size=batch)
    _, grads = loss_and_gradients(spec, params, X, y)
    shared = {name: p.astype(dtype) for name, p in params.items()}
    Xd = X.astype(dtype)[None]
    eps = dtype(epsilon)
    worst = 0.0
    for name, p in params.items():
        g = grads[name].reshape(-1)
        k = min(coords_per_tensor, p.size)
        coords = rng.choice(p.size, size=k, replace=False)
        for lo in range(0, k, chunk):
            idx = coords[lo:lo + chunk]
            n = len(idx)
            stacked = np.repeat(shared[name].reshape(1, -1), 2 * n, axis=0)
            stacked[np.arange(n), idx] += eps
            stacked[np.arange(n, 2 * n), idx] -= eps
            trial = dict(shared)
            trial[name] = stacked.reshape((2 * n,) + p.shape)
            losses = _ref_losses(spec, trial, Xd, y)
            numeric = ((losses[:n] - losses[n:]) / (2 * eps)).astype(np.float64)
            analytic = g[idx]
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst


# -- Adam ----------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(lr=lr, m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# -- checkpoints ---------------------------------------------------------------------

@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def save_checkpoint(directory: str | Path, ckpt: Checkpoint) -> Path:
    """Write ``manifest.json`` and the little-endian float64 blob ``params.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    with open(directory / "params.bin", "wb") as fh:
        for name, p in ckpt.params.items():
            data = np.ascontiguousarray(p, dtype="<f8").tobytes()
            fh.write(data)
            tensors.append({"name": name, "shape": list(p.shape), "offset": offset,
                            "nbytes": len(data)})
            offset += len(data)
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "spec": ckpt.spec.to_dict(),
        "param_count": param_count(ckpt.spec),
        "dtype": "<f8",
        "tensors": tensors,
        "history": ckpt.history,
        "meta": ckpt.meta,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"{directory}: unsupported checkpoint schema")
    spec = ModelSpec.from_dict(manifest["spec"])
    blob = (directory / "params.bin").read_bytes()
    params = {}
    for t in manifest["tensors"]:
        raw = blob[t["offset"]:t["offset"] + t["nbytes"]]
        params[t["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(t["shape"])
    expected = param_shapes(spec)
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise ValueError(f"{directory}: tensor shapes do not match the architecture")
    return Checkpoint(spec, params, manifest.get("history", []), manifest.get("meta", {}))
