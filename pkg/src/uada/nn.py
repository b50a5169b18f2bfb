"""A small feed-forward network with explicit backpropagation and momentum SGD.

Parameters are stored as float32. Every forward and backward pass runs in
float64 so losses and gradients accumulate in a fixed order at full
precision. ``forward`` is read-only and safe to call from several threads;
``backward`` and ``sgd_step`` need exclusive access to the model.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .rng import substream


class ModelError(ValueError):
    """Incompatible model shapes or inputs."""


class TrainingAborted(RuntimeError):
    """Non-finite loss or gradient during training."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer: ``dense``, ``conv``, ``relu``, ``maxpool`` or ``flatten``."""

    kind: str
    in_size: int = 0
    out_size: int = 0
    kernel: int = 3
    stride: int = 1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in": self.in_size, "out": self.out_size,
                "kernel": self.kernel, "stride": self.stride}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], d["in"], d["out"], d["kernel"], d["stride"])


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, int, int]  # channels, height, width
    num_classes: int
    layers: tuple[LayerSpec, ...]
    init_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            tuple(d["input_shape"]), d["num_classes"],
            tuple(LayerSpec.from_dict(x) for x in d["layers"]), d["init_seed"],
        )


def mlp_s(input_shape, num_classes: int, init_seed: int = 0, hidden: int = 128) -> ModelSpec:
    """flatten -> dense(hidden) -> relu -> dense(num_classes)"""
    n_in = int(np.prod(input_shape))
    return ModelSpec(tuple(input_shape), num_classes, (
        LayerSpec("flatten"),
        LayerSpec("dense", n_in, hidden),
        LayerSpec("relu"),
        LayerSpec("dense", hidden, num_classes),
    ), init_seed)


def cnn_s(input_shape, num_classes: int, init_seed: int = 0) -> ModelSpec:
    """conv3x3(16) -> relu -> pool -> conv3x3(32) -> relu -> pool -> dense(num_classes)"""
    c, h, w = input_shape
    flat = 32 * (h // 4) * (w // 4)
    return ModelSpec(tuple(input_shape), num_classes, (
        LayerSpec("conv", c, 16, 3, 1),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv", 16, 32, 3, 1),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("flatten"),
        LayerSpec("dense", flat, num_classes),
    ), init_seed)


ARCHITECTURES = {"mlp-s": mlp_s, "cnn-s": cnn_s}


def _trace_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape (without batch) after every layer; raises on mismatch."""
    shape: tuple[int, ...] = tuple(spec.input_shape)
    shapes = []
    trainable = 0
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            if len(shape) != 1 or shape[0] != layer.in_size:
                raise ModelError(f"layer {i} dense expects ({layer.in_size},), got {shape}")
            shape = (layer.out_size,)
            trainable += 1
        elif layer.kind == "conv":
            if len(shape) != 3 or shape[0] != layer.in_size:
                raise ModelError(f"layer {i} conv expects {layer.in_size} channels, got {shape}")
            if layer.kernel % 2 != 1:
                raise ModelError(f"layer {i} conv kernel must be odd")
            h = (shape[1] - 1) // layer.stride + 1
            w = (shape[2] - 1) // layer.stride + 1
            shape = (layer.out_size, h, w)
            trainable += 1
        elif layer.kind == "maxpool":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ModelError(f"layer {i} maxpool needs a feature map, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "relu":
            pass
        else:
            raise ModelError(f"layer {i}: unknown kind {layer.kind!r}")
        shapes.append(shape)
    if trainable == 0:
        raise ModelError("model has no trainable layer")
    if shape != (spec.num_classes,):
        raise ModelError(f"final output {shape} does not match {spec.num_classes} classes")
    return shapes


@dataclass
class Model:
    spec: ModelSpec
    params: list[np.ndarray]  # weight, bias per trainable layer, declaration order
    velocity: list[np.ndarray]
    forward_count: int = 0
    backward_count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def _count_forward(self):
        with self._lock:
            self.forward_count += 1

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return h.hexdigest()

    def copy(self) -> "Model":
        return Model(self.spec, [p.copy() for p in self.params], [v.copy() for v in self.velocity])


def init_model(spec: ModelSpec) -> Model:
    """Uniform fan-in initialization, |w| <= sqrt(1 / fan_in), deterministic in ``init_seed``."""
    _trace_shapes(spec)
    rng = substream(spec.init_seed, "init")
    params = []
    for layer in spec.layers:
        if layer.kind == "dense":
            fan_in = layer.in_size
            wshape = (layer.out_size, layer.in_size)
        elif layer.kind == "conv":
            fan_in = layer.in_size * layer.kernel * layer.kernel
            wshape = (layer.out_size, layer.in_size, layer.kernel, layer.kernel)
        else:
            continue
        bound = math.sqrt(1.0 / fan_in)
        params.append(rng.uniform(-bound, bound, size=wshape).astype(np.float32))
        params.append(rng.uniform(-bound, bound, size=layer.out_size).astype(np.float32))
    velocity = [np.zeros(p.shape, dtype=np.float64) for p in params]
    return Model(spec, params, velocity)


def _check_input(m: Model, x: np.ndarray):
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(m.spec.input_shape):
        raise ModelError(f"input shape {x.shape[1:]} does not match model {m.spec.input_shape}")


def _run(m: Model, x: np.ndarray, params=None, keep=False):
    """Forward through all layers in float64; optionally keep per-layer caches."""
    params = m.params if params is None else params
    a = np.asarray(x, dtype=np.float64)
    caches = []
    pi = 0
    for layer in m.spec.layers:
        if layer.kind == "dense":
            w, b = params[pi], params[pi + 1]
            pi += 2
            cache = a
            a = a @ np.asarray(w, dtype=np.float64).T + b
        elif layer.kind == "conv":
            w, b = params[pi], params[pi + 1]
            pi += 2
            n, _, h, wd = a.shape
            k, pad, s = layer.kernel, layer.kernel // 2, layer.stride
            cols = _kernels.im2col(np.ascontiguousarray(a), k, pad)
            out = cols @ np.asarray(w, dtype=np.float64).reshape(layer.out_size, -1).T + b
            out = out.reshape(n, h, wd, layer.out_size).transpose(0, 3, 1, 2)
            if s > 1:
                out = out[:, :, ::s, ::s]
            cache = (cols, a.shape)
            a = np.ascontiguousarray(out)
        elif layer.kind == "relu":
            a = np.maximum(a, 0.0)
            cache = a > 0
        elif layer.kind == "maxpool":
            out, arg = _kernels.maxpool2(np.ascontiguousarray(a))
            cache = (arg, a.shape)
            a = out
        elif layer.kind == "flatten":
            cache = a.shape
            a = a.reshape(a.shape[0], -1)
        if keep:
            caches.append(cache)
    return a, caches


def forward(m: Model, x: np.ndarray) -> np.ndarray:
    """Logits (batch x num_classes, float64). Counts one forward evaluation."""
    if hasattr(x, "data") and not isinstance(x, np.ndarray):
        x = x.data
    _check_input(m, x)
    logits, _ = _run(m, x)
    m._count_forward()
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(logits: np.ndarray, labels: np.ndarray, reduction: str = "mean") -> float:
    """Softmax cross-entropy, log-sum-exp stabilized."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ModelError(f"logits {logits.shape} do not match {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ModelError(f"label outside [0, {logits.shape[1]})")
    nll = -_log_softmax(logits)[np.arange(len(labels)), labels]
    if reduction == "mean":
        return float(nll.mean())
    if reduction == "sum":
        return float(nll.sum())
    raise ModelError(f"unknown reduction {reduction!r}")


@dataclass
class Tape:
    """Activations of one forward pass, enough to backpropagate without re-running it."""

    logits: np.ndarray
    caches: list
    params: list[np.ndarray]


def forward_tape(m: Model, x: np.ndarray) -> Tape:
    """Like ``forward`` (and counted the same) but keeps the activations."""
    if hasattr(x, "data") and not isinstance(x, np.ndarray):
        x = x.data
    _check_input(m, x)
    params = list(m.params)
    logits, caches = _run(m, x, params=params, keep=True)
    m._count_forward()
    return Tape(logits, caches, params)


def backward_tape(m: Model, tape: Tape, labels: np.ndarray):
    """Mean cross-entropy of a recorded forward pass and its parameter gradients."""
    params = tape.params
    logits = tape.logits
    value = loss(logits, labels)
    n = logits.shape[0]
    probs = np.exp(_log_softmax(logits))
    probs[np.arange(n), labels] -= 1.0
    d = probs / n

    grads: list[np.ndarray] = [None] * len(params)  # type: ignore[list-item]
    pi = len(params)
    first_trainable = next(i for i, l in enumerate(m.spec.layers) if l.kind in ("dense", "conv"))
    for li in range(len(m.spec.layers) - 1, first_trainable - 1, -1):
        layer, cache = m.spec.layers[li], tape.caches[li]
        last = li == first_trainable  # no input gradient needed below the first weights
        if layer.kind == "dense":
            pi -= 2
            w = np.asarray(params[pi], dtype=np.float64)
            grads[pi] = d.T @ cache
            grads[pi + 1] = d.sum(axis=0)
            if not last:
                d = d @ w
        elif layer.kind == "conv":
            pi -= 2
            cols, in_shape = cache
            nb, _, h, wd = in_shape
            k, pad, s = layer.kernel, layer.kernel // 2, layer.stride
            if s > 1:
                full = np.zeros((nb, layer.out_size, h, wd))
                full[:, :, ::s, ::s] = d
                d = full
            d2 = d.transpose(0, 2, 3, 1).reshape(-1, layer.out_size)
            w = np.asarray(params[pi], dtype=np.float64).reshape(layer.out_size, -1)
            grads[pi] = (d2.T @ cols).reshape(params[pi].shape)
            grads[pi + 1] = d2.sum(axis=0)
            if not last:
                d = _kernels.col2im(d2 @ w, in_shape, k, pad)
        elif layer.kind == "relu":
            d = d * cache
        elif layer.kind == "maxpool":
            arg, in_shape = cache
            d = _kernels.maxpool2_backward(d, arg, in_shape)
        elif layer.kind == "flatten":
            d = d.reshape(cache)
    with m._lock:
        m.backward_count += 1
    return value, grads


def backward(m: Model, x: np.ndarray, labels: np.ndarray, params=None):
    """Mean cross-entropy and its gradient with respect to every parameter.

    Returns ``(loss, grads)`` with ``grads`` aligned to ``m.params`` (float64).
    The forward pass run here is part of the backward and is not counted as
    a forward evaluation. ``params`` substitutes other parameter arrays
    (e.g. float64 copies for gradient checks).
    """
    if hasattr(x, "data") and not isinstance(x, np.ndarray):
        x = x.data
    _check_input(m, x)
    params = list(m.params if params is None else params)
    logits, caches = _run(m, x, params=params, keep=True)
    return backward_tape(m, Tape(logits, caches, params), labels)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ModelError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ModelError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ModelError("weight_decay must be >= 0")
        if self.schedule not in ("constant", "cosine"):
            raise ModelError(f"unknown schedule {self.schedule!r}")


def learning_rate(cfg: OptimConfig, step_index: int, total_steps: int) -> float:
    if cfg.schedule == "constant" or total_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step_index / total_steps))


def sgd_step(m: Model, grads, cfg: OptimConfig, step_index: int, total_steps: int) -> float:
    """v <- mu*v + g + wd*w ; w <- w - lr*v. Returns the learning rate used."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient at step {step_index}")
    lr = learning_rate(cfg, step_index, total_steps)
    velocity, params = [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for w, v0, g in zip(m.params, m.velocity, grads):
            v = cfg.momentum * v0 + g + cfg.weight_decay * w.astype(np.float64)
            velocity.append(v)
            params.append((w.astype(np.float64) - lr * v).astype(np.float32))
    # commit only a finite update so the model never holds inf/nan
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingAborted(f"parameter update overflowed at step {step_index}")
    m.velocity, m.params = velocity, params
    return lr
