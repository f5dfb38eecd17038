"""Small trainable network with hand-written backpropagation.

Tensors are plain float64 numpy arrays shaped (batch, channels, height,
width) for images and (batch, features) for flat data.  Every learnable
block lives in a ParamGroup carrying its gradient buffer, a learning-rate
scale factor and a squared-penalty coefficient, so the optimizer can give
APLU hinge parameters their reduced step size and slope penalty.

A Network instance is single-threaded while training; distinct instances
share no mutable state and may train concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationFamily
from .errors import ConfigurationError, TrainingFault


@dataclass
class ParamGroup:
    """A block of learnable values with its gradient buffer.

    The effective SGD step is global_lr * lr_scale; the loss gains
    l2_coeff * sum(values**2).
    """

    name: str
    values: np.ndarray
    lr_scale: float = 1.0
    l2_coeff: float = 0.0
    grads: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.grads is None:
            self.grads = np.zeros_like(self.values)

    def zero_grad(self):
        self.grads[...] = 0.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 30
    learning_rate: float = 0.0001
    epochs: int = 30
    seed: int = 0


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_groups(self) -> list[ParamGroup]:
        return []

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            weights = np.zeros((out_features, in_features))
        else:
            weights = _he_uniform(rng, (out_features, in_features), in_features)
        self.weights = ParamGroup("dense_weights", weights)
        self.bias = ParamGroup("dense_bias", np.zeros(out_features))
        self._x = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ConfigurationError(
                f"dense expects (batch, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.weights.values.T + self.bias.values

    def backward(self, dy):
        self.weights.grads += dy.T @ self._x
        self.bias.grads += dy.sum(axis=0)
        return dy @ self.weights.values

    def param_groups(self):
        return [self.weights, self.bias]

    def out_shape(self, in_shape):
        return (self.out_features,)

    def spec(self):
        return {"kind": "dense", "in_features": self.in_features,
                "out_features": self.out_features}


def _im2col(x: np.ndarray, kernel: int, stride: int):
    n, c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"kernel {kernel} does not fit input of spatial size {h}x{w}")
    i0 = np.repeat(np.arange(kernel), kernel)
    j0 = np.tile(np.arange(kernel), kernel)
    i1 = stride * np.repeat(np.arange(oh), ow)
    j1 = stride * np.tile(np.arange(ow), oh)
    ii = i0[:, None] + i1[None, :]
    jj = j0[:, None] + j1[None, :]
    cols = x[:, :, ii, jj]                       # (n, c, k*k, oh*ow)
    return cols.reshape(n, c * kernel * kernel, oh * ow), oh, ow, ii, jj


class Conv2d(Layer):
    """Valid (unpadded) 2-D convolution."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, rng: np.random.Generator | None = None,
                 grad_input: bool = True):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.grad_input = grad_input
        fan_in = in_channels * kernel * kernel
        if rng is None:
            weights = np.zeros((out_channels, in_channels, kernel, kernel))
        else:
            weights = _he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.weights = ParamGroup("conv_weights", weights)
        self.bias = ParamGroup("conv_bias", np.zeros(out_channels))
        self._cache = None

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"conv2d expects (batch, {self.in_channels}, h, w), got {x.shape}")
        cols, oh, ow, ii, jj = _im2col(x, self.kernel, self.stride)
        w2 = self.weights.values.reshape(self.out_channels, -1)
        out = np.einsum("of,nfl->nol", w2, cols) + self.bias.values[:, None]
        self._cache = (cols, x.shape, ii, jj)
        return out.reshape(x.shape[0], self.out_channels, oh, ow)

    def backward(self, dy):
        cols, x_shape, ii, jj = self._cache
        n = x_shape[0]
        dflat = dy.reshape(n, self.out_channels, -1)
        w2 = self.weights.values.reshape(self.out_channels, -1)
        self.weights.grads += np.einsum("nol,nfl->of", dflat, cols).reshape(
            self.weights.values.shape)
        self.bias.grads += dflat.sum(axis=(0, 2))
        if not self.grad_input:
            return None
        dcols = np.einsum("of,nol->nfl", w2, dflat).reshape(
            n, self.in_channels, self.kernel * self.kernel, -1)
        dx = np.zeros(x_shape)
        np.add.at(dx, (slice(None), slice(None), ii, jj), dcols)
        return dx

    def param_groups(self):
        return [self.weights, self.bias]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        return (self.out_channels, oh, ow)

    def spec(self):
        return {"kind": "conv2d", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride}


class MaxPool2d(Layer):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a
    window are dropped."""

    def __init__(self, kernel: int):
        self.kernel = kernel
        self._cache = None

    def forward(self, x):
        k = self.kernel
        n, c, h, w = x.shape
        oh, ow = h // k, w // k
        if oh < 1 or ow < 1:
            raise ConfigurationError(f"pool kernel {k} exceeds input {h}x{w}")
        v = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
        windows = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        arg = windows.argmax(axis=-1)
        self._cache = (x.shape, arg)
        return np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        k = self.kernel
        x_shape, arg = self._cache
        n, c, h, w = x_shape
        oh, ow = h // k, w // k
        dwin = np.zeros((n, c, oh, ow, k * k))
        np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
        dx = np.zeros(x_shape)
        dx[:, :, :oh * k, :ow * k] = dwin.reshape(
            n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, oh * k, ow * k)
        return dx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.kernel, w // self.kernel)

    def spec(self):
        return {"kind": "maxpool", "kernel": self.kernel}


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def spec(self):
        return {"kind": "flatten"}


class Activation(Layer):
    """Element-wise activation with per-channel learnable parameters.

    For image input the channel axis is axis 1; for flat input every
    feature is its own channel.
    """

    def __init__(self, family: ActivationFamily, channels: int,
                 rng: np.random.Generator | None = None,
                 paper_gradients: bool = False):
        self.family = family
        self.channels = channels
        self.paper_gradients = paper_gradients
        rng = rng if rng is not None else np.random.default_rng(0)
        self.groups = [
            ParamGroup(f"{family.tag}_{name}", values, lr_scale=scale, l2_coeff=l2)
            for name, values, scale, l2 in family.init_channel_params(channels, rng)
        ]
        self._widths = [g.values.shape[-1] for g in self.groups]
        self._cache = None

    def _block(self, ndim: int):
        if not self.groups:
            return None
        block = np.concatenate([g.values for g in self.groups], axis=-1)
        if ndim == 4:
            return block.reshape(self.channels, 1, 1, -1)
        return block

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"activation built for {self.channels} channels got {x.shape}")
        value, dx, dparams = self.family.evaluate(
            x, self._block(x.ndim), paper_gradients=self.paper_gradients)
        self._cache = (dx, dparams, x.ndim)
        return value

    def backward(self, dy):
        dx, dparams, ndim = self._cache
        if dparams is not None:
            # sum over batch and spatial axes -> per-channel blocks
            axes = (0, 2, 3) if ndim == 4 else (0,)
            dblock = (dy[..., None] * dparams).sum(axis=axes)
            offset = 0
            for g, width in zip(self.groups, self._widths):
                g.grads += dblock[..., offset:offset + width]
                offset += width
        return dy * dx

    def param_groups(self):
        return list(self.groups)

    def out_shape(self, in_shape):
        return in_shape

    def spec(self):
        return {"kind": "activation", "family": self.family.to_dict(),
                "channels": self.channels,
                "paper_gradients": self.paper_gradients}


class Network:
    """Ordered layer stack with a softmax cross-entropy head."""

    def __init__(self, layers: list[Layer], input_shape: tuple, seed: int = 0):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.seed = seed

    @property
    def param_groups(self) -> list[ParamGroup]:
        groups = []
        for layer in self.layers:
            groups.extend(layer.param_groups())
        return groups

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ConfigurationError(
                f"network expects inputs of shape {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def zero_grads(self):
        for g in self.param_groups:
            g.zero_grad()

    def penalty(self) -> float:
        return float(sum(g.l2_coeff * np.sum(g.values ** 2)
                         for g in self.param_groups if g.l2_coeff))

    def loss_only(self, x: np.ndarray, labels: np.ndarray) -> float:
        """Mean softmax cross-entropy plus penalties, without backprop."""
        labels = np.asarray(labels)
        logits = self.forward(x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        return float(-log_probs[np.arange(len(labels)), labels].mean()
                     + self.penalty())

    def loss_and_backward(self, x: np.ndarray, labels: np.ndarray) -> float:
        """Mean softmax cross-entropy plus squared penalties; fills grads."""
        labels = np.asarray(labels)
        self.zero_grads()
        logits = self.forward(x)
        n, n_classes = logits.shape
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ConfigurationError(
                f"labels must lie in [0, {n_classes}), got range "
                f"[{labels.min()}, {labels.max()}]")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        loss = -log_probs[np.arange(n), labels].mean() + self.penalty()
        if not np.isfinite(loss):
            raise TrainingFault(f"non-finite loss {loss!r}")

        dlogits = np.exp(log_probs)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        for g in self.param_groups:
            if g.l2_coeff:
                g.grads += 2.0 * g.l2_coeff * g.values
        return float(loss)

    def predict_scores(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Softmax probabilities, one row per sample, rows summing to 1."""
        x = np.asarray(x, dtype=float)
        rows = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start:start + batch_size])
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            rows.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(rows, axis=0)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = layer.spec()
            params = {g.name: g.values.tolist() for g in layer.param_groups()}
            if params:
                entry["params"] = params
            layers.append(entry)
        return {"format": "melunet-checkpoint-v1", "seed": self.seed,
                "input_shape": list(self.input_shape), "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        if d.get("format") != "melunet-checkpoint-v1":
            raise ConfigurationError(f"unknown checkpoint format {d.get('format')!r}")
        layers: list[Layer] = []
        for entry in d["layers"]:
            kind = entry["kind"]
            if kind == "dense":
                layer = Dense(entry["in_features"], entry["out_features"])
            elif kind == "conv2d":
                layer = Conv2d(entry["in_channels"], entry["out_channels"],
                               entry["kernel"], entry["stride"])
            elif kind == "maxpool":
                layer = MaxPool2d(entry["kernel"])
            elif kind == "flatten":
                layer = Flatten()
            elif kind == "activation":
                layer = Activation(ActivationFamily.from_dict(entry["family"]),
                                   entry["channels"],
                                   paper_gradients=entry.get("paper_gradients", False))
            else:
                raise ConfigurationError(f"unknown layer kind {kind!r}")
            for g in layer.param_groups():
                g.values[...] = np.asarray(entry["params"][g.name], dtype=float)
            layers.append(layer)
        return cls(layers, tuple(d["input_shape"]), seed=d.get("seed", 0))


# ------------------------------------------------------------------
# module-level operation surface
# ------------------------------------------------------------------

def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def loss_and_backward(net: Network, batch: np.ndarray, labels: np.ndarray) -> float:
    return net.loss_and_backward(batch, labels)


def sgd_step(groups: list[ParamGroup], global_lr: float) -> None:
    """values <- values - global_lr * lr_scale * grads, per group."""
    for g in groups:
        g.values -= global_lr * g.lr_scale * g.grads


def predict_scores(net: Network, data: np.ndarray) -> np.ndarray:
    return net.predict_scores(data)


def train(net: Network, data: np.ndarray, labels: np.ndarray,
          cfg: TrainConfig, rng: np.random.Generator | None = None,
          augment_fn=None) -> list[float]:
    """Mini-batch SGD; returns the per-epoch mean loss trace.

    Deterministic given the rng (or cfg.seed): shuffling and any
    augmentation draw from the single stream.  Divergence aborts with the
    epoch and batch recorded.
    """
    if len(data) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    labels = np.asarray(labels)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        losses = []
        for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb = data[idx]
            if augment_fn is not None:
                xb = augment_fn(xb, rng)
            try:
                loss = net.loss_and_backward(xb, labels[idx])
            except TrainingFault as exc:
                raise TrainingFault(
                    f"{exc} (epoch {epoch}, batch {bi})") from None
            sgd_step(net.param_groups, cfg.learning_rate)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
    return trace


def build_small_cnn(input_shape: tuple, n_classes: int,
                    family: ActivationFamily, rng: np.random.Generator,
                    conv_channels: tuple = (4, 8), kernel: int = 3,
                    pool: int = 2, dense_units: tuple = (),
                    paper_gradients: bool = False, seed: int = 0) -> Network:
    """Standard small CNN: an activation follows every conv and hidden dense.

    All conv/dense weights are drawn before any activation parameters so
    two networks built with the same rng state differ only in their
    activation layers.
    """
    c, h, w = input_shape
    convs = []
    shape = (c, h, w)
    for out_ch in conv_channels:
        if shape[1] < kernel or shape[2] < kernel:
            raise ConfigurationError(
                f"input {input_shape} is too small for {len(conv_channels)} "
                f"conv blocks of kernel {kernel} with pool {pool}")
        conv = Conv2d(shape[0], out_ch, kernel, rng=rng,
                      grad_input=bool(convs))
        shape = conv.out_shape(shape)
        convs.append(conv)
        shape = (shape[0], shape[1] // pool, shape[2] // pool)
        if shape[1] < 1 or shape[2] < 1:
            raise ConfigurationError(
                f"input {input_shape} is too small for {len(conv_channels)} "
                f"conv blocks of kernel {kernel} with pool {pool}")
    flat = int(np.prod(shape))
    denses = []
    in_f = flat
    for units in dense_units:
        denses.append(Dense(in_f, units, rng=rng))
        in_f = units
    head = Dense(in_f, n_classes, rng=rng)

    layers: list = []
    for conv in convs:
        layers.append(conv)
        layers.append(Activation(family, conv.out_channels, rng=rng,
                                 paper_gradients=paper_gradients))
        layers.append(MaxPool2d(pool))
    layers.append(Flatten())
    for dense in denses:
        layers.append(dense)
        layers.append(Activation(family, dense.out_features, rng=rng,
                                 paper_gradients=paper_gradients))
    layers.append(head)
    return Network(layers, input_shape, seed=seed)


def save_checkpoint(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh)


def load_checkpoint(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return Network.from_dict(json.load(fh))
