"""A small deterministic NN engine on numpy.

Layers work on batches (leading axis) in float64 and cache what their
backward pass needs.  Only the handful of layer types the two classifiers
use are provided: valid stride-1 convolution, dense, ReLU, sigmoid, softmax
and flatten.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"MELO"
CHECKPOINT_VERSION = 1

BCE_EPS = 1e-7


class CheckpointError(ValueError):
    pass


@dataclass
class Parameter:
    """A weight tensor with its gradient slot and Adam state."""

    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape


class ModelParameters(dict):
    """Ordered ``name -> Parameter`` map."""

    def values_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self.items()}

    def grads_dict(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.items()}

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad.fill(0.0)

    def count(self) -> int:
        return sum(p.value.size for p in self.values())

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            (k, Parameter(p.value.copy(), p.grad.copy(), p.m.copy(), p.v.copy(), p.step))
            for k, p in self.items()
        )


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


# --------------------------------------------------------------------------
# Functional kernels (single example)


def conv2d_forward(x, kernels, bias) -> np.ndarray:
    """Valid, stride-1 2-D convolution (cross-correlation).

    ``x`` is [C, H, W], ``kernels`` [F, C, kh, kw], ``bias`` [F]; returns
    [F, H - kh + 1, W - kw + 1].
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ValueError("expected input [C,H,W] and kernels [F,C,kh,kw]")
    if kernels.shape[1] != x.shape[0] or bias.shape != (kernels.shape[0],):
        raise ValueError(f"shape mismatch: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    if kernels.shape[2] > x.shape[1] or kernels.shape[3] > x.shape[2]:
        raise ValueError("kernel larger than input")
    return _conv_batch(x[None], kernels, bias)[0][0]


def dense_forward(x, weights, bias) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or x.shape != (weights.shape[1],) or np.shape(bias) != (weights.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {weights.shape}, b {np.shape(bias)}")
    return weights @ x + bias


def _conv_batch(x, kernels, bias):
    """Batched im2col convolution; returns (output [B,F,H',W'], cols)."""
    f, c, kh, kw = kernels.shape
    b, _, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # [B, C, H', W', kh, kw] -> [B, H', W', C, kh, kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    out = cols @ kernels.reshape(f, -1).T + bias
    return out.reshape(b, ho, wo, f).transpose(0, 3, 1, 2), cols


def softmax(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# Losses


def binary_cross_entropy(p, y):
    """Loss and dloss/dp, with ``p`` clamped to ``[1e-7, 1 - 1e-7]``.

    Works elementwise on arrays as well as scalars.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    dp = -(y / p) + (1.0 - y) / (1.0 - p)
    if loss.ndim == 0:
        return float(loss), float(dp)
    return loss, dp


def cross_entropy(logits, target):
    """Softmax cross-entropy for one example.

    ``target`` is a class index or a one-hot / probability vector.  Returns
    ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    if k < 2:
        raise ValueError("cross_entropy needs at least two classes")
    if np.ndim(target) == 0:
        t = int(target)
        if not 0 <= t < k:
            raise ValueError(f"target index {t} out of range for {k} classes")
        onehot = np.zeros(k)
        onehot[t] = 1.0
    else:
        onehot = np.asarray(target, dtype=np.float64)
        if onehot.shape != logits.shape:
            raise ValueError("target vector shape must match logits")
    logp = log_softmax(logits)
    return float(-(onehot * logp).sum()), np.exp(logp) - onehot


def batch_cross_entropy(logits, targets):
    """Mean softmax cross-entropy over a batch of class indices.

    Returns ``(mean loss, per-example losses, dmean/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if targets.shape != (n,) or np.any((targets < 0) | (targets >= k)):
        raise ValueError("targets must be class indices in [0, K)")
    logp = log_softmax(logits)
    rows = np.arange(n)
    losses = -logp[rows, targets]
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return float(losses.mean()), losses, grad / n


def batch_binary_cross_entropy(logits, targets):
    """BCE on the class-1 probability of a 2-way softmax head.

    Returns ``(mean loss, per-example losses, dmean/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    probs = softmax(logits)
    p1 = probs[:, 1]
    losses, dp = binary_cross_entropy(p1, targets)
    losses, dp = np.atleast_1d(losses), np.atleast_1d(dp)
    # the clamp has zero slope outside [eps, 1 - eps]
    dp = np.where((p1 > BCE_EPS) & (p1 < 1.0 - BCE_EPS), dp, 0.0)
    # dp1/dz1 = p0 p1, dp1/dz0 = -p0 p1
    s = probs[:, 0] * p1
    grad = np.stack([-s * dp, s * dp], axis=1)
    return float(losses.mean()), losses, grad / n


# --------------------------------------------------------------------------
# Layers


class Layer:
    name = ""

    def parameters(self) -> dict[str, Parameter]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {"type": type(self).__name__, "name": self.name}


class _Cached(Layer):
    def _need_cache(self, attr):
        val = getattr(self, attr, None)
        if val is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a cached forward pass")
        return val


class Conv2D(_Cached):
    def __init__(self, in_channels, out_channels, kernel_size, name, rng=None):
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else kernel_size
        self.name = name
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, (kh, kw)
        rng = rng or np.random.default_rng(0)
        shape = (out_channels, in_channels, kh, kw)
        self.weight = Parameter(glorot_uniform(rng, shape, in_channels * kh * kw, out_channels * kh * kw))
        self.bias = Parameter(np.zeros(out_channels))
        self._cols = self._in_shape = None

    def parameters(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"{self.name}: expected [B,{self.in_channels},H,W], got {x.shape}")
        kh, kw = self.kernel_size
        if x.shape[2] < kh or x.shape[3] < kw:
            raise ValueError(f"{self.name}: input {x.shape[2:]} smaller than kernel {self.kernel_size}")
        out, self._cols = _conv_batch(x, self.weight.value, self.bias.value)
        self._in_shape = x.shape
        return out

    def backward(self, grad):
        cols = self._need_cache("_cols")
        b, c, h, w = self._in_shape
        f = self.out_channels
        kh, kw = self.kernel_size
        ho, wo = h - kh + 1, w - kw + 1
        g = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        self.weight.grad += (g.T @ cols).reshape(self.weight.shape)
        self.bias.grad += g.sum(axis=0)
        dcols = (g @ self.weight.value.reshape(f, -1)).reshape(b, ho, wo, c, kh, kw)
        dx = np.zeros(self._in_shape)
        for u in range(kh):
            for v in range(kw):
                dx[:, :, u:u + ho, v:v + wo] += dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        return dx

    def config(self):
        return {**super().config(), "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel_size": list(self.kernel_size)}


class Dense(_Cached):
    def __init__(self, in_features, out_features, name, rng=None):
        self.name = name
        self.in_features, self.out_features = in_features, out_features
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(glorot_uniform(rng, (out_features, in_features), in_features, out_features))
        self.bias = Parameter(np.zeros(out_features))
        self._x = None

    def parameters(self):
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"{self.name}: expected [B,{self.in_features}], got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        x = self._need_cache("_x")
        self.weight.grad += grad.T @ x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value

    def config(self):
        return {**super().config(), "in_features": self.in_features, "out_features": self.out_features}


class ReLU(_Cached):
    def __init__(self, name="relu"):
        self.name = name
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._need_cache("_mask"), grad, 0.0)


class Sigmoid(_Cached):
    def __init__(self, name="sigmoid"):
        self.name = name
        self._y = None

    def forward(self, x):
        self._y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._y

    def backward(self, grad):
        y = self._need_cache("_y")
        return grad * y * (1.0 - y)


class Softmax(_Cached):
    """Softmax over the last axis."""

    def __init__(self, name="softmax"):
        self.name = name
        self._y = None

    def forward(self, x):
        self._y = softmax(x, axis=-1)
        return self._y

    def backward(self, grad):
        y = self._need_cache("_y")
        return y * (grad - (grad * y).sum(axis=-1, keepdims=True))


class Flatten(_Cached):
    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache("_shape"))


_LAYER_TYPES = {cls.__name__: cls for cls in (Conv2D, Dense, ReLU, Sigmoid, Softmax, Flatten)}


class Sequential:
    """A stack of layers sharing one :class:`ModelParameters` map."""

    def __init__(self, layers):
        self.layers = list(layers)
        self.params = ModelParameters()
        for layer in self.layers:
            for k, p in layer.parameters().items():
                if k in self.params:
                    raise ValueError(f"duplicate parameter name {k}")
                self.params[k] = p

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad):
        """Accumulate parameter gradients; returns the gradient w.r.t. the input."""
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def activation_pattern(self) -> bytes:
        """Fingerprint of the ReLU on/off pattern of the last forward pass.

        Finite-difference checks use this to detect perturbations that
        cross a kink, where the two-sided difference is not a derivative.
        """
        masks = [np.packbits(layer._mask) for layer in self.layers if isinstance(layer, ReLU)]
        return b"".join(m.tobytes() for m in masks)

    def config(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    @classmethod
    def from_config(cls, config: list[dict]) -> "Sequential":
        layers = []
        for spec in config:
            kind = spec["type"]
            if kind == "Conv2D":
                layers.append(Conv2D(spec["in_channels"], spec["out_channels"],
                                     tuple(spec["kernel_size"]), spec["name"]))
            elif kind == "Dense":
                layers.append(Dense(spec["in_features"], spec["out_features"], spec["name"]))
            elif kind in _LAYER_TYPES:
                layers.append(_LAYER_TYPES[kind](spec["name"]))
            else:
                raise CheckpointError(f"unknown layer type {kind!r}")
        return cls(layers)


# --------------------------------------------------------------------------
# Optimiser


def adam_step(params: ModelParameters, grads=None, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> ModelParameters:
    """One bias-corrected Adam update, in place.

    ``grads`` maps names to arrays; when omitted each parameter's own
    ``grad`` slot is used.
    """
    for name, p in params.items():
        g = p.grad if grads is None else np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.value.shape}")
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


# --------------------------------------------------------------------------
# Gradient checking


def numerical_gradient(f, x: np.ndarray, index, h: float = 1e-4) -> float:
    """Central difference of scalar ``f()`` w.r.t. ``x[index]`` (``x`` mutated and restored)."""
    orig = x[index]
    x[index] = orig + h
    fp = f()
    x[index] = orig - h
    fm = f()
    x[index] = orig
    return (fp - fm) / (2.0 * h)


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), floor)


def gradient_check(net: Sequential, x, upstream, *, samples_per_param: int | None = None,
                   h: float = 1e-4, rng=None, max_retries: int = 20) -> list[tuple[str, tuple, float, float]]:
    """Compare backprop against central differences for ``sum(net(x) * upstream)``.

    Returns ``(name, index, analytic, numeric)`` for every checked entry,
    including the input itself under the name ``"input"``.  With
    ``samples_per_param`` set only that many random entries per tensor are
    checked.  Entries whose perturbation flips a ReLU are resampled, up to
    ``max_retries`` times per entry, and dropped if no smooth entry turns up
    (with exhaustive checking they are dropped at once).
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)

    net.params.zero_grad()
    net.forward(x)
    base_pattern = net.activation_pattern()
    dx = net.backward(upstream)

    def objective():
        return float(np.sum(net.forward(x) * upstream))

    tensors = [(k, p.value, p.grad) for k, p in net.params.items()] + [("input", x, dx)]
    results = []
    for name, arr, grad in tensors:
        if samples_per_param is None or samples_per_param >= arr.size:
            candidates = [np.unravel_index(i, arr.shape) for i in range(arr.size)]
            retry = False
        else:
            candidates = [np.unravel_index(i, arr.shape) for i in rng.choice(arr.size, samples_per_param, replace=False)]
            retry = True
        for idx in candidates:
            smooth = False
            for _ in range(max_retries if retry else 1):
                orig = arr[idx]
                arr[idx] = orig + h
                net.forward(x)
                kink = net.activation_pattern() != base_pattern
                arr[idx] = orig - h
                net.forward(x)
                kink = kink or net.activation_pattern() != base_pattern
                arr[idx] = orig
                if not kink:
                    smooth = True
                    break
                idx = np.unravel_index(int(rng.integers(arr.size)), arr.shape)
            if not smooth:
                # every stencil tried straddles a kink; no derivative to compare against
                continue
            num = numerical_gradient(objective, arr, idx, h)
            results.append((name, tuple(int(i) for i in idx), float(grad[idx]), num))
    net.forward(x)
    return results


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, params: ModelParameters, header: dict) -> None:
    """Binary layout: ``MELO`` | u32 version | u32 len + JSON header |
    u32 count | per parameter: u32 len + name, u32 rank, u32 dims, f64 LE data.
    """
    head = json.dumps(header, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(head)), head,
             struct.pack("<I", len(params))]
    for name, p in params.items():
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", p.value.ndim) + struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        parts.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, head_len = take("<II")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[pos:pos + head_len])
    pos += head_len
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (n,) = take("<I")
        name = data[pos:pos + n].decode()
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) * 8
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated data for {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
        pos += size
    return header, arrays
