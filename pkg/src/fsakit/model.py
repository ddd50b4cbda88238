"""From-scratch image classifiers with analytic input gradients.

Layers are plain numpy, float64 end to end, with hand-written backward
passes. The attack code only ever needs d(loss)/d(input); training
additionally uses the parameter gradients. No autodiff framework is
involved, so every gradient path is explicit and reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor_ops import _col2im, _im2col, as_f64, conv_out_size

__all__ = [
    "LabeledImage",
    "Conv2d",
    "ReLU",
    "MaxPool2d",
    "Flatten",
    "Linear",
    "Classifier",
    "WeightFormatError",
    "softmax",
    "forward",
    "loss",
    "input_gradient",
    "predict",
    "train",
    "build_mlp",
    "build_cnn",
    "save_weights",
    "load_weights",
]


class WeightFormatError(ValueError):
    """Raised when a weight file cannot be parsed or is self-inconsistent."""


@dataclass
class LabeledImage:
    """One image in [0, 1]^[C, H, W] with an integer class label."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        self.pixels = as_f64(self.pixels)
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be [C, H, W], got shape {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")


# ---------------------------------------------------------------------------
# Layers. Each exposes out_shape() for construction-time shape checking,
# forward() returning (output, cache), and backward() consuming that cache.
# ---------------------------------------------------------------------------


@dataclass
class Conv2d:
    weight: np.ndarray  # [K, C, kh, kw]
    bias: np.ndarray  # [K]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weight = as_f64(self.weight)
        self.bias = as_f64(self.bias)
        if self.weight.ndim != 4:
            raise ValueError(f"Conv2d weight must be [K, C, kh, kw], got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"Conv2d bias must be [K]={self.weight.shape[0]}, got {self.bias.shape}")

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k, kc, kh, kw = self.weight.shape
        if kc != c:
            raise ValueError(f"Conv2d expects {kc} input channels, got {c}")
        return (k, conv_out_size(h, kh, self.stride, self.padding), conv_out_size(w, kw, self.stride, self.padding))

    def forward(self, x):
        b = x.shape[0]
        k, _, kh, kw = self.weight.shape
        _, oh, ow = self.out_shape(x.shape[1:])
        cols = _im2col(x, kh, kw, self.stride, self.padding)
        out = cols @ self.weight.reshape(k, -1).T + self.bias
        return out.transpose(0, 2, 1).reshape(b, k, oh, ow), (x.shape, cols)

    def backward(self, grad_out, cache, need_params=False):
        x_shape, cols = cache
        b, k, oh, ow = grad_out.shape
        _, _, kh, kw = self.weight.shape
        dout = grad_out.reshape(b, k, oh * ow).transpose(0, 2, 1)
        grad_cols = dout @ self.weight.reshape(k, -1)
        grad_x = _col2im(grad_cols, x_shape, kh, kw, self.stride, self.padding)
        if not need_params:
            return grad_x, None
        grad_w = np.tensordot(dout, cols, axes=([0, 1], [0, 1])).reshape(self.weight.shape)
        grad_b = dout.sum(axis=(0, 1))
        return grad_x, (grad_w, grad_b)


@dataclass
class ReLU:
    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0.0

    def backward(self, grad_out, cache, need_params=False):
        return grad_out * cache, None


@dataclass
class MaxPool2d:
    kernel_size: int

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ValueError(f"pool size must be >= 1, got {self.kernel_size}")

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k = self.kernel_size
        if h < k or w < k:
            raise ValueError(f"pool size {k} exceeds spatial extent {h}x{w}")
        return (c, h // k, w // k)

    def forward(self, x):
        b, c, h, w = x.shape
        k = self.kernel_size
        oh, ow = h // k, w // k
        tiles = x[:, :, : oh * k, : ow * k].reshape(b, c, oh, k, ow, k)
        tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
        idx = tiles.argmax(axis=-1)  # ties resolve to the first maximum
        out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, grad_out, cache, need_params=False):
        x_shape, idx = cache
        b, c, h, w = x_shape
        k = self.kernel_size
        oh, ow = h // k, w // k
        tiles = np.zeros((b, c, oh, ow, k * k), dtype=np.float64)
        np.put_along_axis(tiles, idx[..., None], grad_out[..., None], axis=-1)
        grad_x = np.zeros(x_shape, dtype=np.float64)
        grad_x[:, :, : oh * k, : ow * k] = (
            tiles.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * k, ow * k)
        )
        return grad_x, None


@dataclass
class Flatten:
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache, need_params=False):
        return grad_out.reshape(cache), None


@dataclass
class Linear:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        self.weight = as_f64(self.weight)
        self.bias = as_f64(self.bias)
        if self.weight.ndim != 2:
            raise ValueError(f"Linear weight must be [out, in], got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"Linear bias must be [out]={self.weight.shape[0]}, got {self.bias.shape}")

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.weight.shape[1]:
            raise ValueError(f"Linear expects flat input of size {self.weight.shape[1]}, got shape {in_shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, grad_out, cache, need_params=False):
        grad_x = grad_out @ self.weight
        if not need_params:
            return grad_x, None
        return grad_x, (grad_out.T @ cache, grad_out.sum(axis=0))


_LAYER_TAGS = {Conv2d: 1, Linear: 2, ReLU: 3, MaxPool2d: 4, Flatten: 5}


@dataclass
class Classifier:
    """A feed-forward stack of layers mapping [C, H, W] images to class logits."""

    layers: list
    input_shape: tuple
    num_classes: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (C, H, W), got {self.input_shape}")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({type(layer).__name__}): {exc}") from exc
        if shape != (self.num_classes,):
            raise ValueError(f"layer stack produces shape {shape}, expected ({self.num_classes},) logits")


def _as_batch(x):
    x = as_f64(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected [C, H, W] or [B, C, H, W], got shape {x.shape}")


def _forward_cached(model: Classifier, xb: np.ndarray):
    caches = []
    h = xb
    for layer in model.layers:
        h, cache = layer.forward(h)
        caches.append(cache)
    return h, caches


def forward(model: Classifier, x) -> np.ndarray:
    """Logits for one image [C, H, W] -> [num_classes], or a batch thereof."""
    xb, single = _as_batch(x)
    if xb.shape[1:] != model.input_shape:
        raise ValueError(f"input shape {xb.shape[1:]} does not match model input {model.input_shape}")
    logits, _ = _forward_cached(model, xb)
    return logits[0] if single else logits


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = as_f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss(logits, label) -> float:
    """Softmax cross-entropy of one logit vector against an integer label."""
    z = as_f64(logits)
    if z.ndim != 1:
        raise ValueError(f"loss expects a single logit vector, got shape {z.shape}")
    label = int(label)
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} out of range for {z.shape[0]} classes")
    return float(-_log_softmax(z)[label])


def _grad_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(per-image cross-entropy)/d(logits) = softmax(logits) - onehot(label)."""
    g = softmax(logits)
    g[np.arange(g.shape[0]), labels] -= 1.0
    return g


def input_gradient(model: Classifier, x, y) -> np.ndarray:
    """Analytic d(loss)/d(pixels), same shape as x.

    For a batch, each image's gradient is taken against its own label; the
    images do not interact. Labels out of range raise ValueError.
    """
    xb, single = _as_batch(x)
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if labels.shape[0] != xb.shape[0]:
        raise ValueError(f"got {labels.shape[0]} labels for {xb.shape[0]} images")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(f"labels must lie in [0, {model.num_classes}), got range [{labels.min()}, {labels.max()}]")
    logits, caches = _forward_cached(model, xb)
    delta = _grad_logits(logits, labels)
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        delta, _ = layer.backward(delta, cache, need_params=False)
    return delta[0] if single else delta


def predict(model: Classifier, x) -> np.ndarray:
    """Argmax class for one image or a batch (ties resolve to the lowest index)."""
    logits = forward(model, x)
    return np.asarray(logits.argmax(axis=-1))


# ---------------------------------------------------------------------------
# Stock architectures and training.
# ---------------------------------------------------------------------------


def build_mlp(input_shape=(1, 28, 28), num_classes=10, rng=None) -> Classifier:
    """Flatten -> Linear(784, 128) -> ReLU -> Linear(128, classes)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    n_in = int(np.prod(input_shape))
    hidden = 128
    layers = [
        Flatten(),
        Linear(rng.normal(0.0, np.sqrt(2.0 / n_in), (hidden, n_in)), np.zeros(hidden)),
        ReLU(),
        Linear(rng.normal(0.0, np.sqrt(2.0 / hidden), (num_classes, hidden)), np.zeros(num_classes)),
    ]
    return Classifier(layers, input_shape, num_classes)


def build_cnn(input_shape=(1, 28, 28), num_classes=10, rng=None) -> Classifier:
    """conv3x3x16 -> ReLU -> pool2 -> conv3x3x32 -> ReLU -> pool2 -> Linear."""
    rng = rng if rng is not None else np.random.default_rng(0)
    c, h, w = input_shape
    flat = 32 * (h // 4) * (w // 4)
    layers = [
        Conv2d(rng.normal(0.0, np.sqrt(2.0 / (c * 9)), (16, c, 3, 3)), np.zeros(16), padding=1),
        ReLU(),
        MaxPool2d(2),
        Conv2d(rng.normal(0.0, np.sqrt(2.0 / (16 * 9)), (32, 16, 3, 3)), np.zeros(32), padding=1),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
        Linear(rng.normal(0.0, np.sqrt(2.0 / flat), (num_classes, flat)), np.zeros(num_classes)),
    ]
    return Classifier(layers, input_shape, num_classes)


_ARCHS = {"mlp": build_mlp, "cnn": build_cnn}


def _data_arrays(data):
    """Accept a Dataset-like object, (pixels, labels) arrays, or LabeledImages."""
    if hasattr(data, "pixels") and hasattr(data, "labels"):
        return as_f64(data.pixels), np.asarray(data.labels, dtype=np.int64)
    if isinstance(data, tuple) and len(data) == 2:
        return as_f64(data[0]), np.asarray(data[1], dtype=np.int64)
    pixels = np.stack([img.pixels for img in data])
    labels = np.array([img.label for img in data], dtype=np.int64)
    return pixels, labels


def train(arch, data, epochs: int, lr: float, seed: int, batch_size: int = 64, on_epoch=None) -> Classifier:
    """Fit a classifier with minibatch SGD on softmax cross-entropy.

    Args:
        arch: "mlp", "cnn", or an existing Classifier to continue training.
        data: dataset with .pixels [N, C, H, W] and .labels [N], a tuple of
            those arrays, or a sequence of LabeledImage.
        epochs: passes over the data.
        lr: SGD learning rate.
        seed: controls weight init and the per-epoch shuffle; same seed and
            data give bit-identical weights.
        batch_size: minibatch size (the last batch may be smaller).
        on_epoch: optional callback(epoch_index, mean_epoch_loss).

    Returns:
        The fitted Classifier.
    """
    pixels, labels = _data_arrays(data)
    if pixels.ndim != 4:
        raise ValueError(f"training data must be [N, C, H, W], got shape {pixels.shape}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if lr <= 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    rng = np.random.default_rng(seed)
    if isinstance(arch, Classifier):
        model = arch
    else:
        try:
            builder = _ARCHS[str(arch).lower()]
        except KeyError:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {sorted(_ARCHS)}") from None
        num_classes = int(labels.max()) + 1 if labels.size else 10
        model = builder(tuple(pixels.shape[1:]), max(num_classes, 10), rng)

    n = pixels.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            xb, yb = pixels[sel], labels[sel]
            logits, caches = _forward_cached(model, xb)
            total += float(-_log_softmax(logits)[np.arange(len(sel)), yb].sum())
            delta = _grad_logits(logits, yb) / len(sel)
            updates = []
            for layer, cache in zip(reversed(model.layers), reversed(caches)):
                delta, grads = layer.backward(delta, cache, need_params=True)
                updates.append((layer, grads))
            for layer, grads in updates:
                if grads is None:
                    continue
                if isinstance(layer, (Conv2d, Linear)):
                    layer.weight = layer.weight - lr * grads[0]
                    layer.bias = layer.bias - lr * grads[1]
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise ValueError(f"training diverged at epoch {epoch} (loss={mean_loss}); lower the learning rate")
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return model


# ---------------------------------------------------------------------------
# Weight serialization: a small self-describing binary format.
#
#   magic "FSAW" | u8 version | u8 layer_count | u32 C,H,W | u32 num_classes
#   then per layer: u8 tag, tag-specific shape header, raw little-endian
#   float64 parameter blocks. Round trips are bit-exact.
# ---------------------------------------------------------------------------

_MAGIC = b"FSAW"
_VERSION = 1


def save_weights(model: Classifier, path) -> None:
    """Write a Classifier to the FSAW binary format (bit-exact round trip)."""
    chunks = [_MAGIC, struct.pack("<BB", _VERSION, len(model.layers))]
    chunks.append(struct.pack("<IIII", *model.input_shape, model.num_classes))
    for layer in model.layers:
        tag = _LAYER_TAGS[type(layer)]
        chunks.append(struct.pack("<B", tag))
        if isinstance(layer, Conv2d):
            chunks.append(struct.pack("<IIIIII", *layer.weight.shape, layer.stride, layer.padding))
            chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        elif isinstance(layer, Linear):
            chunks.append(struct.pack("<II", *layer.weight.shape))
            chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        elif isinstance(layer, MaxPool2d):
            chunks.append(struct.pack("<I", layer.kernel_size))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise WeightFormatError(f"truncated weight file: {what} needs {n} bytes, {len(self.blob) - self.pos} left")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def load_weights(path) -> Classifier:
    """Read a Classifier from the FSAW binary format.

    Raises WeightFormatError naming the offending section on bad magic,
    truncation, or unknown layer tags; shape inconsistencies surface as the
    usual construction-time ValueError.
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic = reader.take(4, "magic")
    if magic != _MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    version, n_layers = reader.unpack("<BB", "header")
    if version != _VERSION:
        raise WeightFormatError(f"unsupported format version {version}")
    c, h, w, num_classes = reader.unpack("<IIII", "shape header")
    layers = []
    for i in range(n_layers):
        (tag,) = reader.unpack("<B", f"layer {i}: tag")
        if tag == _LAYER_TAGS[Conv2d]:
            k, kc, kh, kw, stride, padding = reader.unpack("<IIIIII", f"layer {i}: conv header")
            weight = reader.floats(k * kc * kh * kw, f"layer {i}: conv weights").reshape(k, kc, kh, kw)
            bias = reader.floats(k, f"layer {i}: conv bias")
            layers.append(Conv2d(weight, bias, stride, padding))
        elif tag == _LAYER_TAGS[Linear]:
            n_out, n_in = reader.unpack("<II", f"layer {i}: linear header")
            weight = reader.floats(n_out * n_in, f"layer {i}: linear weights").reshape(n_out, n_in)
            bias = reader.floats(n_out, f"layer {i}: linear bias")
            layers.append(Linear(weight, bias))
        elif tag == _LAYER_TAGS[ReLU]:
            layers.append(ReLU())
        elif tag == _LAYER_TAGS[MaxPool2d]:
            (ksize,) = reader.unpack("<I", f"layer {i}: pool header")
            layers.append(MaxPool2d(ksize))
        elif tag == _LAYER_TAGS[Flatten]:
            layers.append(Flatten())
        else:
            raise WeightFormatError(f"layer {i}: unknown layer tag {tag}")
    if reader.pos != len(reader.blob):
        raise WeightFormatError(f"{len(reader.blob) - reader.pos} trailing bytes after layer {n_layers - 1}")
    return Classifier(layers, (c, h, w), num_classes)
