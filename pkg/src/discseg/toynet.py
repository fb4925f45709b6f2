"""Small fully-convolutional embedding network in numpy.

Layers are same-padded ``k x k`` convolutions with a leaky ReLU between
them and a linear last layer.  Tensors are laid out ``(H, W, C)``; kernels
are ``(C_out, C_in, k, k)``.  Forward and backward are written by hand and
the whole stack runs in float64 unless told otherwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from discseg.loss import LossBreakdown, LossConfig, loss_backward, per_class_loss_backward
from discseg.rng import XorShift64Star
from discseg.synthdata import AUGMENTATIONS, StickScene, augment, network_input

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 5
    hidden_channels: int = 32
    num_layers: int = 4
    kernel_size: int = 3
    out_dims: int = 2
    weight_init_seed: int = 0
    negative_slope: float = 0.1
    dtype: str = "float64"

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.out_dims < 2:
            raise ValueError("out_dims must be >= 2")
        if self.num_layers < 1 or self.in_channels < 1 or self.hidden_channels < 1:
            raise ValueError("num_layers, in_channels and hidden_channels must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def layer_shapes(self) -> list[tuple[int, int]]:
        chans = [self.in_channels] + [self.hidden_channels] * (self.num_layers - 1) + [self.out_dims]
        return list(zip(chans[:-1], chans[1:]))

    def param_names(self) -> list[str]:
        return [f"{kind}{i}" for i in range(self.num_layers) for kind in ("w", "b")]


Params = dict[str, np.ndarray]


class StaleCacheError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def init_params(config: NetConfig) -> Params:
    """Uniform(-a, a) kernels with a = sqrt(6 / fan_in), zero biases, drawn
    from ``XorShift64Star(weight_init_seed)`` in layer / row-major order."""
    rng = XorShift64Star(config.weight_init_seed)
    k = config.kernel_size
    params = {}
    for i, (cin, cout) in enumerate(config.layer_shapes()):
        bound = math.sqrt(6.0 / (cin * k * k))
        n = cout * cin * k * k
        u = np.fromiter((rng.random() for _ in range(n)), dtype=np.float64, count=n)
        params[f"w{i}"] = ((2.0 * u - 1.0) * bound).reshape(cout, cin, k, k).astype(config.dtype)
        params[f"b{i}"] = np.zeros(cout, dtype=config.dtype)
    return params


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(H, W, C) -> (H*W, C*k*k) patches of the zero-padded input."""
    p = k // 2
    h, w, c = x.shape
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, C, k, k)
    return win.reshape(h * w, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int], k: int) -> np.ndarray:
    h, w, c = shape
    p = k // 2
    cols = cols.reshape(h, w, c, k, k)
    out = np.zeros((h + 2 * p, w + 2 * p, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[i:i + h, j:j + w] += cols[:, :, :, i, j]
    return out[p:p + h, p:p + w]


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded convolution; returns the output and the patch matrix."""
    cout, cin, k, _ = w.shape
    if x.shape[2] != cin:
        raise ValueError(f"input has {x.shape[2]} channels, kernel expects {cin}")
    cols = _im2col(x, k)
    out = cols @ w.reshape(cout, -1).T + b
    return out.reshape(x.shape[0], x.shape[1], cout), cols


def conv2d_backward(grad_out, cols, w, in_shape):
    cout, _, k, _ = w.shape
    g = grad_out.reshape(-1, cout)
    dw = (g.T @ cols).reshape(w.shape)
    db = g.sum(axis=0)
    dx = _col2im(g @ w.reshape(cout, -1), in_shape, k)
    return dx, dw, db


@dataclass
class ForwardCache:
    params: Params
    inputs: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    pre: list = field(default_factory=list)


def forward(params: Params, x: np.ndarray, config: NetConfig) -> tuple[np.ndarray, ForwardCache]:
    """Map an (H, W, in_channels) input to an (H, W, out_dims) embedding map."""
    if x.ndim != 3 or x.shape[2] != config.in_channels:
        raise ValueError(f"expected (H, W, {config.in_channels}) input, got {x.shape}")
    cache = ForwardCache(params=dict(params))
    h = np.asarray(x, dtype=config.dtype)
    for i in range(config.num_layers):
        cache.inputs.append(h.shape)
        z, cols = conv2d(h, params[f"w{i}"], params[f"b{i}"])
        cache.cols.append(cols)
        if i < config.num_layers - 1:
            cache.pre.append(z)
            h = np.where(z > 0, z, config.negative_slope * z)
        else:
            h = z
    return h, cache


def backward(params: Params, cache: ForwardCache, grad: np.ndarray, config: NetConfig) -> Params:
    """Parameter gradients given d(loss)/d(embedding map)."""
    for name in config.param_names():
        if cache.params.get(name) is not params[name]:
            raise StaleCacheError(f"cache was built with a different {name!r}; rerun forward")
    g = np.asarray(grad, dtype=config.dtype)
    if g.shape[:2] != cache.inputs[-1][:2] or g.shape[2] != config.out_dims:
        raise ValueError(f"gradient shape {g.shape} does not match network output")
    grads = {}
    for i in reversed(range(config.num_layers)):
        if i < config.num_layers - 1:
            z = cache.pre[i]
            g = np.where(z > 0, g, config.negative_slope * g)
        g, grads[f"w{i}"], grads[f"b{i}"] = conv2d_backward(g, cache.cols[i], params[f"w{i}"], cache.inputs[i])
    return grads


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params, **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update.  Returns new dicts; inputs are untouched."""
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
        m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        new_params[k] = p - state.lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + state.epsilon)
    return new_params, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.epsilon)


@dataclass
class Sample:
    inputs: np.ndarray  # (H, W, in_channels)
    instances: np.ndarray  # (H, W)
    semantic: np.ndarray | None = None

    @classmethod
    def from_scene(cls, scene: StickScene) -> "Sample":
        return cls(network_input(scene.image), scene.instances)


@dataclass
class TrainResult:
    params: Params
    state: AdamState
    trace: list[LossBreakdown]


def _augmented(sample: Sample, op: str) -> Sample:
    # coordinates stay attached to the frame: rebuild them after moving pixels
    img = StickScene(sample.inputs[..., :3], sample.instances)
    moved = augment(img, op)
    sem = None
    if sample.semantic is not None:
        sem = augment(StickScene(sample.inputs[..., :3], sample.semantic), op).instances
    extra = network_input(moved.image)[..., 3:]
    return Sample(np.concatenate([moved.image, extra], axis=2), moved.instances, sem)


def train(
    config: NetConfig,
    dataset: Sequence[Sample],
    loss_config: LossConfig | None = None,
    steps: int = 1000,
    seed: int = 0,
    lr: float = 1e-4,
    params: Params | None = None,
    state: AdamState | None = None,
    batch_size: int = 1,
    augment_data: bool = False,
    callback: Callable[[int, LossBreakdown, Params], None] | None = None,
) -> TrainResult:
    """Adam on the discriminative loss (per semantic class when a sample has
    a semantic map).  Images are visited in a seeded shuffled order; with
    ``augment_data`` each draw also gets a random flip / rotation."""
    if not dataset:
        raise ValueError("dataset is empty")
    loss_config = loss_config or LossConfig()
    params = params if params is not None else init_params(config)
    state = state if state is not None else AdamState.zeros_like(params, lr=lr)
    rng = XorShift64Star(seed)
    order: list[int] = []
    trace = []
    for step in range(steps):
        total = None
        grads = None
        for _ in range(batch_size):
            if not order:
                order = rng.permutation(len(dataset))
            sample = dataset[order.pop(0)]
            if augment_data:
                op = rng.randint(0, len(AUGMENTATIONS))
                if op < len(AUGMENTATIONS):
                    sample = _augmented(sample, AUGMENTATIONS[op])
            emb, cache = forward(params, sample.inputs, config)
            if sample.semantic is None:
                breakdown, g_emb = loss_backward(emb, sample.instances, loss_config)
            else:
                breakdown, g_emb = per_class_loss_backward(emb, sample.semantic, sample.instances, loss_config)
            g = backward(params, cache, g_emb / batch_size, config)
            total = breakdown if total is None else total + breakdown
            grads = g if grads is None else {k: grads[k] + g[k] for k in g}
        total = total.scaled(1.0 / batch_size)
        if not math.isfinite(total.total):
            raise TrainingDiverged(f"non-finite loss at step {step}: {total}")
        trace.append(total)
        if callback is not None:
            callback(step, total, params)
        params, state = adam_step(params, grads, state)
        if step % 100 == 0:
            log.debug("step %d total %.6g var %.6g dist %.6g", step, total.total, total.l_var, total.l_dist)
    return TrainResult(params, state, trace)


def embed(params: Params, x: np.ndarray, config: NetConfig) -> np.ndarray:
    return forward(params, x, config)[0]
