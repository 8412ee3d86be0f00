"""Small feedforward networks with hand-written backpropagation.

A :class:`Network` is an immutable layer list plus one flat weight vector.
Inputs are always passed flattened, shape ``(n, d)``; conv networks reshape
internally to ``(n, C, H, W)``.

Derivative conventions: the ReLU subgradient at 0 is 0, maxpool routes the
gradient to the first maximal entry of each window, and the hinge loss
breaks ties toward the smallest class index.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EvaluationError, FormatError, InvalidInputError


class LossKind(str, Enum):
    NLL = "nll"
    HINGE = "multiclass_hinge"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        aliases = {"nll": cls.NLL, "hinge": cls.HINGE, "multiclass_hinge": cls.HINGE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidInputError(f"unsupported loss kind {value!r}") from None


LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool2d", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int | None = None  # dense output width, or conv output channels
    kernel: int | None = None
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidInputError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("dense", "conv2d") and (self.out is None or self.out < 1):
            raise InvalidInputError(f"{self.kind} layer needs a positive output size")
        if self.kind == "conv2d" and (self.kernel is None or self.kernel < 1):
            raise InvalidInputError("conv2d layer needs a positive kernel size")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def dense(out, bias=True):
    return LayerSpec("dense", out=out, bias=bias)


def conv2d(channels, kernel, bias=True):
    return LayerSpec("conv2d", out=channels, kernel=kernel, bias=bias)


RELU = LayerSpec("relu")
MAXPOOL = LayerSpec("maxpool2d")
FLATTEN = LayerSpec("flatten")


def _plan(layers, input_shape):
    """Per-layer (input shape, output shape, param shapes)."""
    shape = tuple(input_shape)
    plan = []
    for spec in layers:
        params = []
        if spec.kind == "dense":
            if len(shape) != 1:
                raise InvalidInputError(f"dense layer got non-flat input of shape {shape}")
            params.append((spec.out, shape[0]))
            if spec.bias:
                params.append((spec.out,))
            out = (spec.out,)
        elif spec.kind == "conv2d":
            if len(shape) != 3:
                raise InvalidInputError(f"conv2d layer needs (C, H, W) input, got {shape}")
            c, h, w = shape
            if spec.kernel > min(h, w):
                raise InvalidInputError(f"kernel {spec.kernel} larger than input {h}x{w}")
            params.append((spec.out, c, spec.kernel, spec.kernel))
            if spec.bias:
                params.append((spec.out,))
            out = (spec.out, h - spec.kernel + 1, w - spec.kernel + 1)
        elif spec.kind == "maxpool2d":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise InvalidInputError(f"maxpool2d needs (C, H>=2, W>=2) input, got {shape}")
            out = (shape[0], shape[1] // 2, shape[2] // 2)
        elif spec.kind == "flatten":
            out = (int(np.prod(shape)),)
        else:
            out = shape
        plan.append((shape, out, params))
        shape = out
    return plan, shape


@dataclass(frozen=True)
class Network:
    layers: tuple
    input_shape: tuple
    n_classes: int
    weights: np.ndarray

    def __post_init__(self):
        layers = tuple(self.layers)
        input_shape = tuple(int(s) for s in self.input_shape)
        plan, out = _plan(layers, input_shape)
        if out != (self.n_classes,):
            raise InvalidInputError(f"network output shape {out} does not match {self.n_classes} classes")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        expected = sum(math.prod(s) for _, _, ps in plan for s in ps)
        if w.size != expected:
            raise InvalidInputError(f"weight vector has {w.size} entries, layers need {expected}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_shape", input_shape)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_plan", plan)

    @classmethod
    def zeros(cls, layers, input_shape, n_classes) -> "Network":
        plan, _ = _plan(tuple(layers), tuple(input_shape))
        size = sum(math.prod(s) for _, _, ps in plan for s in ps)
        return cls(tuple(layers), tuple(input_shape), n_classes, np.zeros(size))

    @property
    def input_dim(self) -> int:
        return math.prod(self.input_shape)

    @property
    def n_params(self) -> int:
        return self.weights.size

    def with_weights(self, weights) -> "Network":
        return replace(self, weights=np.asarray(weights, dtype=float))

    def param_views(self, weights=None):
        """Per-layer lists of reshaped views into ``weights`` (default: own weights)."""
        w = self.weights if weights is None else weights
        views, off = [], 0
        for _, _, shapes in self._plan:
            vs = []
            for s in shapes:
                size = math.prod(s)
                vs.append(w[off : off + size].reshape(s))
                off += size
            views.append(vs)
        return views

    def fan_ins(self) -> np.ndarray:
        """Fan-in of the layer each weight belongs to (for initialization)."""
        out = []
        for (in_shape, _, shapes), spec in zip(self._plan, self.layers):
            if not shapes:
                continue
            fan = in_shape[0] if spec.kind == "dense" else in_shape[0] * spec.kernel**2
            out.extend(np.full(math.prod(s), fan) for s in shapes)
        return np.concatenate(out) if out else np.zeros(0)

    def weight_matrix(self) -> np.ndarray:
        """``W`` of a single bias-free dense layer (the linear model)."""
        if len(self.layers) != 1 or self.layers[0].kind != "dense" or self.layers[0].bias:
            raise InvalidInputError("weight_matrix is defined only for a bias-free linear model")
        return self.param_views()[0][0]


def linear(d: int, k: int) -> Network:
    """Bias-free linear model: logits are ``W x``."""
    return Network.zeros((dense(k, bias=False),), (d,), k)


def mlp(d: int, k: int, widths) -> Network:
    layers = []
    for w in widths:
        layers += [dense(w), RELU]
    layers.append(dense(k))
    return Network.zeros(tuple(layers), (d,), k)


def cnn(input_shape, k: int, channels, kernel: int = 3, hidden: int = 32) -> Network:
    """Conv-ReLU-maxpool blocks followed by two dense layers."""
    layers = []
    for c in channels:
        layers += [conv2d(c, kernel), RELU, MAXPOOL]
    layers += [FLATTEN, dense(hidden), RELU, dense(k)]
    return Network.zeros(tuple(layers), tuple(input_shape), k)


def mlp_param_count(d: int, k: int, depth: int, width: int) -> int:
    if depth == 1:
        return d * k + k
    return d * width + width + (depth - 2) * (width * width + width) + width * k + k


def equal_param_width(d: int, k: int, depth: int, budget: int) -> int:
    """Hidden width that brings a depth-``depth`` MLP closest to ``budget`` parameters."""
    if depth < 2:
        raise InvalidInputError("depth-1 models have no hidden width")
    best, best_err = 1, None
    for width in range(1, 4097):
        err = abs(mlp_param_count(d, k, depth, width) - budget)
        if best_err is None or err < best_err:
            best, best_err = width, err
        elif mlp_param_count(d, k, depth, width) > budget:
            break
    return best


def mlp_by_depth(d: int, k: int, depth: int, width: int | None = None, budget: int | None = None) -> Network:
    """Depth 1 is the bias-free linear model; deeper nets have ``depth - 1`` hidden ReLU layers.

    Without an explicit ``width``, widths are matched to ``budget`` parameters
    (default: a depth-2 net of width 64).
    """
    if depth < 1:
        raise InvalidInputError("depth must be >= 1")
    if depth == 1:
        return linear(d, k)
    if width is None:
        budget = mlp_param_count(d, k, 2, 64) if budget is None else budget
        width = equal_param_width(d, k, depth, budget)
    return mlp(d, k, [width] * (depth - 1))


def init_weights(net: Network, rng: np.random.Generator) -> Network:
    """Centered uniform initialization with half-width ``1/sqrt(fan_in)``."""
    bound = 1.0 / np.sqrt(net.fan_ins())
    return net.with_weights(rng.uniform(-bound, bound))


def sample_prior_weights(net: Network, variance: float, rng: np.random.Generator) -> np.ndarray:
    return np.sqrt(variance) * rng.standard_normal(net.n_params)


# ---- forward / backward ----------------------------------------------------


def _apply_layer(spec: LayerSpec, params, a):
    """One layer forward; returns the output and what backward needs."""
    if spec.kind == "dense":
        z = a @ params[0].T
        if spec.bias:
            z = z + params[1]
        return z, a
    if spec.kind == "conv2d":
        k = spec.kernel
        win = sliding_window_view(a, (k, k), axis=(2, 3))
        z = np.einsum("nchwij,ocij->nohw", win, params[0], optimize=True)
        if spec.bias:
            z = z + params[1][None, :, None, None]
        return z, a
    if spec.kind == "relu":
        return np.maximum(a, 0.0), a
    if spec.kind == "maxpool2d":
        blocks = _pool_blocks(a)
        arg = blocks.argmax(axis=-1)
        z = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return z, (a.shape, arg)
    return a.reshape(a.shape[0], -1), a.shape


def _pool_blocks(a):
    n, c, h, w = a.shape
    ho, wo = h // 2, w // 2
    blocks = a[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(n, c, ho, wo, 4)


def _as_input(net: Network, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise InvalidInputError(f"expected inputs of width {net.input_dim}, got shape {X.shape}")
    return X.reshape((X.shape[0],) + net.input_shape)


def _forward(net: Network, X: np.ndarray, weights=None):
    a = _as_input(net, X)
    cache = []
    for spec, params in zip(net.layers, net.param_views(weights)):
        a, c = _apply_layer(spec, params, a)
        cache.append(c)
    return a, cache


def _backward(net: Network, cache, dout: np.ndarray, weights=None, need_weights=True):
    views = net.param_views(weights)
    grads = [[None] * len(v) for v in views]
    g = dout
    for li in range(len(net.layers) - 1, -1, -1):
        spec, params, c = net.layers[li], views[li], cache[li]
        if spec.kind == "dense":
            if need_weights:
                grads[li][0] = g.T @ c
                if spec.bias:
                    grads[li][1] = g.sum(axis=0)
            g = g @ params[0]
        elif spec.kind == "conv2d":
            k = spec.kernel
            if need_weights:
                win = sliding_window_view(c, (k, k), axis=(2, 3))
                grads[li][0] = np.einsum("nohw,nchwij->ocij", g, win, optimize=True)
                if spec.bias:
                    grads[li][1] = g.sum(axis=(0, 2, 3))
            da = np.zeros_like(c)
            ho, wo = g.shape[2], g.shape[3]
            for i in range(k):
                for j in range(k):
                    da[:, :, i : i + ho, j : j + wo] += np.einsum("nohw,oc->nchw", g, params[0][:, :, i, j])
            g = da
        elif spec.kind == "relu":
            g = g * (c > 0)
        elif spec.kind == "maxpool2d":
            shape, arg = c
            n, ch, h, w = shape
            ho, wo = h // 2, w // 2
            blocks = np.zeros((n, ch, ho, wo, 4))
            np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
            blocks = blocks.reshape(n, ch, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, ch, 2 * ho, 2 * wo)
            da = np.zeros(shape)
            da[:, :, : 2 * ho, : 2 * wo] = blocks
            g = da
        else:
            g = g.reshape(c)
    flat = None
    if need_weights:
        parts = [gr.reshape(-1) for layer in grads for gr in layer]
        flat = np.concatenate(parts) if parts else np.zeros(0)
    return g.reshape(g.shape[0], -1), flat


def forward(net: Network, X: np.ndarray) -> np.ndarray:
    """Logits, shape ``(n, k)`` (``(1, k)`` for a single vector)."""
    logits, _ = _forward(net, X)
    return logits


def _labels(y, n, k):
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,):
        raise InvalidInputError(f"{y.size} labels for {n} inputs")
    if np.any(y < 0) or np.any(y >= k):
        raise InvalidInputError(f"labels must lie in [0, {k})")
    return y.astype(np.int64)


def loss_from_logits(logits: np.ndarray, y, kind) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample loss and its gradient with respect to the logits."""
    kind = LossKind.parse(kind)
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    if not np.all(np.isfinite(z)):
        raise EvaluationError("non-finite logits")
    n, k = z.shape
    y = _labels(y, n, k)
    rows = np.arange(n)
    if kind is LossKind.NLL:
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        loss = lse - shifted[rows, y]
        grad = np.exp(shifted - lse[:, None])
        grad[rows, y] -= 1.0
    else:
        margins = z - z[rows, y][:, None] + 1.0
        margins[rows, y] = 0.0
        top = margins.argmax(axis=1)
        loss = margins[rows, top]
        grad = np.zeros_like(z)
        grad[rows, top] += 1.0
        grad[rows, y] -= 1.0
    return np.maximum(loss, 0.0), grad


def loss(net: Network, X, y, kind) -> np.ndarray:
    """Per-sample losses, all ``>= 0``."""
    logits, _ = _forward(net, X)
    return loss_from_logits(logits, y, kind)[0]


def loss_and_input_gradient(net: Network, X, y, kind, weights=None):
    logits, cache = _forward(net, X, weights)
    losses, dz = loss_from_logits(logits, y, kind)
    dx, _ = _backward(net, cache, dz, weights, need_weights=False)
    if not np.all(np.isfinite(dx)):
        raise EvaluationError("non-finite input gradient")
    return losses, dx


def input_gradient(net: Network, X, y, kind) -> np.ndarray:
    """Per-sample ``grad_x loss(w, x, y)``, shape ``(n, d)``."""
    return loss_and_input_gradient(net, X, y, kind)[1]


def loss_and_weight_gradient(net: Network, X, y, kind, weights=None):
    """Mean batch loss and the mean per-sample weight gradient."""
    logits, cache = _forward(net, X, weights)
    if logits.shape[0] == 0:
        raise InvalidInputError("empty batch")
    losses, dz = loss_from_logits(logits, y, kind)
    _, gw = _backward(net, cache, dz / logits.shape[0], weights)
    if not np.all(np.isfinite(gw)):
        raise EvaluationError("non-finite weight gradient")
    return float(losses.mean()), gw


def weight_gradient(net: Network, X, y, kind) -> np.ndarray:
    return loss_and_weight_gradient(net, X, y, kind)[1]


def lipschitz_bound_hat_loss(kind, k: int | None = None) -> float:
    """Bound on ``|grad_z loss_hat(z, y)|`` over all logits ``z``.

    For NLL the gradient is ``softmax(z) - e_y``, whose norm is below ``sqrt(2)``;
    for the hinge loss it is ``e_top - e_y`` or zero.
    """
    LossKind.parse(kind)
    return math.sqrt(2.0)


def kink_distance(net: Network, X, y, kind) -> float:
    """Distance to the nearest non-differentiable point, measured in pre-activation units.

    Covers ReLU inputs near 0, maxpool windows whose two largest entries
    nearly tie, and hinge margins whose two largest entries nearly tie.
    """
    a = _as_input(net, X)
    dists = [np.inf]
    for spec, params in zip(net.layers, net.param_views()):
        if spec.kind == "relu":
            dists.append(np.abs(a).min())
        elif spec.kind == "maxpool2d":
            top2 = np.sort(_pool_blocks(a), axis=-1)[..., -2:]
            gap = top2[..., 1] - top2[..., 0]
            # ties between dead ReLU outputs carry zero gradient either way
            gap[(top2[..., 1] == 0) & (top2[..., 0] == 0)] = np.inf
            dists.append(gap.min())
        a, _ = _apply_layer(spec, params, a)
    if LossKind.parse(kind) is LossKind.HINGE:
        n = a.shape[0]
        yy = _labels(y, n, a.shape[1])
        m = a - a[np.arange(n), yy][:, None] + 1.0
        m[np.arange(n), yy] = 0.0
        top2 = np.sort(m, axis=1)[:, -2:]
        dists.append((top2[:, 1] - top2[:, 0]).min())
    return float(min(dists))


# ---- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"LSIBNET\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: Network, path) -> Path:
    """Write ``net`` as magic, u32 version, u32 header length, JSON header, then
    the weights as little-endian float64."""
    header = json.dumps(
        {
            "layers": [s.to_dict() for s in net.layers],
            "input_shape": list(net.input_shape),
            "n_classes": net.n_classes,
            "n_params": net.n_params,
        },
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(net.weights.astype("<f8").tobytes())
    return path


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a network checkpoint (magic {raw[:8]!r})")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
        layers = tuple(LayerSpec(**spec) for spec in header["layers"])
        n_params = int(header["n_params"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from None
    body = raw[16 + hlen :]
    if len(body) != 8 * n_params:
        raise FormatError(f"{path}: expected {n_params} weights, found {len(body) / 8:g}")
    weights = np.frombuffer(body, dtype="<f8").astype(float)
    return Network(layers, tuple(header["input_shape"]), int(header["n_classes"]), weights)
