"""Small numpy neural-network engine: conv/pool/dense layers, reverse-mode
gradients, weighted cross-entropy and Adam.

Tensors are NCHW internally; image batches arrive as NHWC in [0, 1] (after
normalization) and are transposed on entry.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class LabelError(ValueError):
    pass


DEFAULT_LAYERS = [
    {"type": "conv", "out": 16, "kernel": 3, "stride": 1},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "conv", "out": 32, "kernel": 3, "stride": 1},
    {"type": "relu"},
    {"type": "maxpool", "size": 2},
    {"type": "flatten"},
    {"type": "dense", "out": None},  # None -> num_outputs
]


@dataclass
class Model:
    """Layer descriptors plus one parameter dict per layer (empty when the
    layer has no weights). ``input_shape`` is (H, W, C)."""

    layers: list
    params: list
    input_shape: tuple
    num_outputs: int

    @property
    def dtype(self):
        for p in self.params:
            if p:
                return p["W"].dtype
        return np.dtype(np.float32)

    def astype(self, dtype) -> "Model":
        params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return Model(copy.deepcopy(self.layers), params, tuple(self.input_shape), self.num_outputs)

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    def param_arrays(self):
        """Flat list of (layer_index, name, array) in checkpoint order."""
        out = []
        for i, p in enumerate(self.params):
            for name in sorted(p):
                out.append((i, name, p[name]))
        return out


def _pad_for(kernel):
    return kernel // 2


def layer_output_shapes(layers, input_shape):
    """Propagate (C, H, W) / (D,) shapes through ``layers``."""
    h, w, c = input_shape
    shape = (c, h, w)
    shapes = []
    for layer in layers:
        kind = layer["type"]
        if kind == "conv":
            k, s = layer["kernel"], layer.get("stride", 1)
            pad = _pad_for(k)
            oh = (shape[1] + 2 * pad - k) // s + 1
            ow = (shape[2] + 2 * pad - k) // s + 1
            shape = (layer["out"], oh, ow)
        elif kind == "maxpool":
            size = layer["size"]
            if shape[1] % size or shape[2] % size:
                raise ShapeError(f"maxpool size {size} does not divide {shape[1:]}")
            shape = (shape[0], shape[1] // size, shape[2] // size)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ShapeError("dense layer needs a flattened input")
            shape = (layer["out"],)
        elif kind in ("relu", "tanh"):
            pass
        else:
            raise ValueError(f"unknown layer type {kind!r}")
        shapes.append(shape)
    return shapes


def init_model(num_outputs, input_shape=(32, 32, 3), layers=None, seed=0, dtype=np.float32) -> Model:
    """Fan-in scaled uniform initialisation, deterministic in ``seed``."""
    layers = copy.deepcopy(DEFAULT_LAYERS if layers is None else layers)
    for layer in layers:
        if layer["type"] == "dense" and layer.get("out") is None:
            layer["out"] = num_outputs
    if layers[-1]["type"] != "dense" or layers[-1]["out"] != num_outputs:
        raise ShapeError(f"final layer must be dense with {num_outputs} outputs")

    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    in_shape = (c, h, w)
    params = []
    for layer, out_shape in zip(layers, layer_output_shapes(layers, input_shape)):
        if layer["type"] == "conv":
            k = layer["kernel"]
            fan_in = in_shape[0] * k * k
            bound = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(layer["out"], in_shape[0], k, k))
            params.append({"W": W.astype(dtype), "b": np.zeros(layer["out"], dtype=dtype)})
        elif layer["type"] == "dense":
            fan_in = in_shape[0]
            bound = np.sqrt(1.0 / fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, layer["out"]))
            params.append({"W": W.astype(dtype), "b": np.zeros(layer["out"], dtype=dtype)})
        else:
            params.append({})
        in_shape = out_shape
    return Model(layers, params, tuple(input_shape), num_outputs)


# ---------------------------------------------------------------- layer ops

def _conv_forward(x, W, b, stride):
    k = W.shape[-1]
    pad = _pad_for(k)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (B, C, OH, OW, k, k) -> cols (B, OH, OW, C*k*k)
    B, C, OH, OW = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, OH, OW, C * k * k)
    out = cols @ W.reshape(W.shape[0], -1).T + b
    return out.transpose(0, 3, 1, 2), (xp.shape, cols)


def _conv_backward(dout, W, stride, cache):
    xp_shape, cols = cache
    F, C, k, _ = W.shape
    pad = _pad_for(k)
    B, _, OH, OW = dout.shape
    d = dout.transpose(0, 2, 3, 1)  # (B, OH, OW, F)
    dW = (d.reshape(-1, F).T @ cols.reshape(-1, C * k * k)).reshape(W.shape)
    db = d.sum(axis=(0, 1, 2))
    dcols = (d @ W.reshape(F, -1)).reshape(B, OH, OW, C, k, k)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * OH:stride, j:j + stride * OW:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    H, Wd = xp_shape[2] - 2 * pad, xp_shape[3] - 2 * pad
    return dxp[:, :, pad:pad + H, pad:pad + Wd], dW, db


def _pool_forward(x, size):
    B, C, H, W = x.shape
    blocks = x.reshape(B, C, H // size, size, W // size, size)
    out = blocks.max(axis=(3, 5))
    # route the gradient to the first maximum in each window
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // size, W // size, size * size)
    arg = flat.argmax(axis=-1)
    return out, arg


def _pool_backward(dout, size, arg, in_shape):
    B, C, H, W = in_shape
    onehot = (np.arange(size * size) == arg[..., None]).astype(dout.dtype)
    d = onehot * dout[..., None]
    d = d.reshape(B, C, H // size, W // size, size, size).transpose(0, 1, 2, 4, 3, 5)
    return d.reshape(in_shape)


def _check_input(model: Model, x):
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(model.input_shape):
        raise ShapeError(f"expected batch of shape (B, {model.input_shape}), got {x.shape}")
    return x.astype(model.dtype, copy=False).transpose(0, 3, 1, 2)


def forward_cached(model: Model, x, keep_cache):
    h = _check_input(model, x)
    caches = []
    for layer, p in zip(model.layers, model.params):
        kind = layer["type"]
        cache = None
        if kind == "conv":
            h, cache = _conv_forward(h, p["W"], p["b"], layer.get("stride", 1))
        elif kind == "relu":
            cache = h > 0
            h = h * cache
        elif kind == "tanh":
            h = np.tanh(h)
            cache = h
        elif kind == "maxpool":
            in_shape = h.shape
            h, arg = _pool_forward(h, layer["size"])
            cache = (arg, in_shape)
        elif kind == "flatten":
            cache = h.shape
            h = h.reshape(h.shape[0], -1)
        elif kind == "dense":
            cache = h
            h = h @ p["W"] + p["b"]
        caches.append(cache if keep_cache else None)
    return h, caches


def forward(model: Model, batch) -> np.ndarray:
    """Pre-softmax logits, shape (B, num_outputs)."""
    return forward_cached(model, batch, keep_cache=False)[0]


def backward(model: Model, caches, dlogits):
    grads = [dict() for _ in model.params]
    d = dlogits
    for idx in range(len(model.layers) - 1, -1, -1):
        layer, p, cache = model.layers[idx], model.params[idx], caches[idx]
        kind = layer["type"]
        if kind == "dense":
            grads[idx] = {"W": cache.T @ d, "b": d.sum(axis=0)}
            d = d @ p["W"].T
        elif kind == "flatten":
            d = d.reshape(cache)
        elif kind == "relu":
            d = d * cache
        elif kind == "tanh":
            d = d * (1.0 - cache ** 2)
        elif kind == "maxpool":
            arg, in_shape = cache
            d = _pool_backward(d, layer["size"], arg, in_shape)
        elif kind == "conv":
            d, dW, db = _conv_backward(d, p["W"], layer.get("stride", 1), cache)
            grads[idx] = {"W": dW, "b": db}
    return grads


def activation_pattern(model: Model, batch):
    """ReLU masks and pool argmaxes; changes across a finite-difference step
    mark points where the loss is not differentiable."""
    _, caches = forward_cached(model, batch, keep_cache=True)
    pattern = []
    for layer, cache in zip(model.layers, caches):
        if layer["type"] == "relu":
            pattern.append(cache)
        elif layer["type"] == "maxpool":
            pattern.append(cache[0])
    return pattern


# ------------------------------------------------------------ loss, softmax

def log_softmax(logits):
    logits = np.asarray(logits)
    if np.isnan(logits).any():
        raise FloatingPointError("NaN in logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def weighted_ce(logits, targets, weights):
    """Sum over samples of ``weights[s] * -log softmax(logits[s])[targets[s]]``
    and its gradient with respect to the logits."""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=logits.dtype)
    if len(targets) != len(logits) or len(weights) != len(logits):
        raise ShapeError("targets/weights length must equal batch size")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise LabelError(f"targets must lie in [0, {logits.shape[1]})")
    logp = log_softmax(logits)
    rows = np.arange(len(targets))
    loss = -(weights * logp[rows, targets]).sum()
    dlogits = np.exp(logp)
    dlogits[rows, targets] -= 1.0
    dlogits *= weights[:, None]
    return float(loss), dlogits


def weighted_ce_grad(model: Model, batch, targets, weights):
    """Loss and exact parameter gradients of the weighted summed CE."""
    logits, caches = forward_cached(model, batch, keep_cache=True)
    loss, dlogits = weighted_ce(logits, targets, weights)
    return loss, backward(model, caches, dlogits)


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: Model, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        m = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
        v = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
        return cls(m, v, 0, lr, beta1, beta2, eps)


def adam_step(model: Model, grads, state: AdamState, lr=None):
    """Bias-corrected Adam update, in place on ``model`` and ``state``."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(model.params, grads, state.m, state.v):
        for name in p:
            gk = g[name]
            if gk.shape != p[name].shape:
                raise ShapeError(f"gradient shape {gk.shape} != parameter {p[name].shape}")
            m[name] *= b1
            m[name] += (1.0 - b1) * gk
            v[name] *= b2
            v[name] += (1.0 - b2) * gk * gk
            step = lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + state.eps)
            p[name] -= step.astype(p[name].dtype)
    return model, state


def lr_schedule(epoch: int, base_lr: float, step_epochs: int = 5, factor: float = 0.1) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * factor ** (epoch // step_epochs)
