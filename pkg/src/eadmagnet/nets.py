"""Layered networks: the image classifiers and autoencoders under test.

A Network is an ordered chain of layers operating on batches. Examples are
flat [0,1]^p vectors everywhere outside this module; the network reshapes
them to (n, h, w, c) on entry when its input is an image and flattens
image-shaped outputs back on exit, so callers never juggle both layouts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

LAYER_KINDS = ("dense", "conv2d", "avgpool2x2", "upsample2x2", "sigmoid", "relu", "flatten")


@dataclass
class LayerSpec:
    """Declarative layer description; shapes must compose along the chain."""

    kind: str
    units: int | None = None       # dense fan-out
    ksize: int | None = None       # conv spatial size (odd)
    filters: int | None = None     # conv fan-out channels

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if self.ksize is None or self.filters is None:
                raise ValueError("conv2d spec needs ksize and filters")
            if self.ksize % 2 == 0:
                raise ValueError("conv kernel spatial size must be odd")
        if self.kind == "dense" and self.units is None:
            raise ValueError("dense spec needs units")


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _Dense:
    kind = "dense"

    def __init__(self, w: Tensor, b: Tensor):
        self.w, self.b = w, b

    def forward(self, x: Tensor, tape):
        return ad.dense(x, self.w, self.b, tape)

    def params(self):
        return [self.w, self.b]


class _Conv2d:
    kind = "conv2d"

    def __init__(self, kern: Tensor, b: Tensor):
        self.kern, self.b = kern, b

    def forward(self, x: Tensor, tape):
        return ad.conv2d(x, self.kern, self.b, tape)

    def params(self):
        return [self.kern, self.b]


class _Stateless:
    _ops = {
        "avgpool2x2": ad.avgpool2x2,
        "upsample2x2": ad.upsample2x2,
        "sigmoid": ad.sigmoid,
        "relu": ad.relu,
        "flatten": ad.flatten,
    }

    def __init__(self, kind: str):
        self.kind = kind
        self._op = self._ops[kind]

    def forward(self, x: Tensor, tape):
        return self._op(x, tape)

    def params(self):
        return []


class Network:
    """A layer chain with a fixed input shape (either (p,) or (h, w, c))."""

    def __init__(self, layers, input_shape):
        self.layers = layers
        self.input_shape = tuple(input_shape)

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        """Flat (n, p) batch in; (n, out) flat batch out."""
        if x.data.ndim != 2 or x.data.shape[1] != self.input_size:
            raise ValueError(
                f"expected (n, {self.input_size}) input, got {x.data.shape}"
            )
        h = x
        if len(self.input_shape) == 3:
            h = ad.reshape(h, (-1,) + self.input_shape, tape)
        for layer in self.layers:
            if layer.kind == "dense" and h.data.ndim != 2:
                h = ad.flatten(h, tape)
            h = layer.forward(h, tape)
        if h.data.ndim != 2:
            h = ad.flatten(h, tape)
        return h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Convenience inference on a (n, p) or (p,) ndarray, no recording."""
        single = np.asarray(x).ndim == 1
        batch = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = self.forward(Tensor(batch)).data
        return out[0] if single else out


def build_network(specs, input_shape, seed: int = 0) -> Network:
    """Instantiate a layer chain with seeded +-sqrt(6/(fan_in+fan_out)) init."""
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(input_shape)  # running activation shape, (h,w,c) or (p,)
    for spec in specs:
        if spec.kind == "conv2d":
            if len(shape) != 3:
                raise ValueError("conv2d needs an image-shaped activation")
            k, cin, cout = spec.ksize, shape[2], spec.filters
            fan = k * k
            kern = Tensor(_glorot(rng, (k, k, cin, cout), fan * cin, fan * cout))
            layers.append(_Conv2d(kern, Tensor(np.zeros(cout))))
            shape = (shape[0], shape[1], cout)
        elif spec.kind == "dense":
            fin = int(np.prod(shape))
            w = Tensor(_glorot(rng, (fin, spec.units), fin, spec.units))
            layers.append(_Dense(w, Tensor(np.zeros(spec.units))))
            shape = (spec.units,)
        elif spec.kind == "avgpool2x2":
            if len(shape) != 3 or shape[0] % 2 or shape[1] % 2:
                raise ValueError(f"avgpool2x2 cannot apply to activation shape {shape}")
            layers.append(_Stateless(spec.kind))
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif spec.kind == "upsample2x2":
            if len(shape) != 3:
                raise ValueError("upsample2x2 needs an image-shaped activation")
            layers.append(_Stateless(spec.kind))
            shape = (shape[0] * 2, shape[1] * 2, shape[2])
        elif spec.kind == "flatten":
            layers.append(_Stateless(spec.kind))
            shape = (int(np.prod(shape)),)
        else:  # sigmoid / relu
            layers.append(_Stateless(spec.kind))
    return Network(layers, input_shape)


@dataclass
class Classifier:
    """K-class classifier: logits chain plus softmax on demand."""

    net: Network
    k: int

    @property
    def input_shape(self):
        return self.net.input_shape

    def logits_tensor(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return self.net.forward(x, tape)

    def logits(self, x: np.ndarray) -> np.ndarray:
        out = self.net(x)
        if out.shape[-1] != self.k:
            raise ValueError(f"network produces {out.shape[-1]} logits, expected {self.k}")
        return out

    def probs(self, x: np.ndarray) -> np.ndarray:
        return ad.softmax(self.logits(x))

    def classify(self, x: np.ndarray) -> int | np.ndarray:
        out = self.logits(x)
        return int(np.argmax(out)) if out.ndim == 1 else np.argmax(out, axis=1)

    def accuracy(self, xs: np.ndarray, ys: np.ndarray) -> float:
        return float(np.mean(self.classify(xs) == ys))


@dataclass
class Autoencoder:
    """Reconstruction chain whose output matches the input shape in [0,1]^p."""

    net: Network
    loss_kind: str = "mse"  # mse | mae
    filters: int | None = None

    @property
    def input_shape(self):
        return self.net.input_shape

    def reconstruct_tensor(self, x: Tensor, tape: Tape | None = None) -> Tensor:
        return self.net.forward(x, tape)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.net(x)


# ---------------------------------------------------------------------------
# stock architectures


def classifier_specs(k: int, dense_units: int = 128, filters=(16, 32)) -> list[LayerSpec]:
    """Desk-scale conv classifier: conv-relu-pool twice, then two dense layers."""
    f1, f2 = filters
    return [
        LayerSpec("conv2d", ksize=3, filters=f1),
        LayerSpec("relu"),
        LayerSpec("avgpool2x2"),
        LayerSpec("conv2d", ksize=3, filters=f2),
        LayerSpec("relu"),
        LayerSpec("avgpool2x2"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=dense_units),
        LayerSpec("relu"),
        LayerSpec("dense", units=k),
    ]


def build_classifier(input_shape, k: int, seed: int = 0, dense_units: int = 128,
                     filters=(16, 32)) -> Classifier:
    specs = classifier_specs(k, dense_units, filters)
    return Classifier(net=build_network(specs, input_shape, seed), k=k)


def mnist_reformer_specs(filters: int = 3) -> list[LayerSpec]:
    """Detector-I/reformer chain: conv stack around an avgpool/upsample pair."""
    w = filters
    return [
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("avgpool2x2"),
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("upsample2x2"),
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("conv2d", ksize=3, filters=1), LayerSpec("sigmoid"),
    ]


def mnist_detector2_specs(filters: int = 3) -> list[LayerSpec]:
    """Detector-II chain: three sigmoid convolutions, no resampling."""
    w = filters
    return [
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("conv2d", ksize=3, filters=1), LayerSpec("sigmoid"),
    ]


def cifar_ae_specs(filters: int = 3) -> list[LayerSpec]:
    """Shared detectors/reformer chain for 3-channel inputs."""
    w = filters
    return [
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("conv2d", ksize=3, filters=w), LayerSpec("sigmoid"),
        LayerSpec("conv2d", ksize=3, filters=3), LayerSpec("sigmoid"),
    ]


def build_autoencoder(input_shape, arch: str = "mnist_reformer", filters: int = 3,
                      loss_kind: str = "mse", seed: int = 0) -> Autoencoder:
    specs = {
        "mnist_reformer": mnist_reformer_specs,
        "mnist_detector2": mnist_detector2_specs,
        "cifar": cifar_ae_specs,
    }[arch](filters)
    net = build_network(specs, input_shape, seed)
    return Autoencoder(net=net, loss_kind=loss_kind, filters=filters)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class FiniteDiffReport:
    passed: bool
    max_rel_error: float
    tolerance: float


def finite_diff_check(net: Network, x: np.ndarray, tolerance: float = 1e-4,
                      step: float = 1e-5, seed: int = 0) -> FiniteDiffReport:
    """Compare tape gradients of a seeded scalar readout against central
    finite differences over every input coordinate. Reports, never raises."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rng = np.random.default_rng(seed)
    probe = rng.normal(size=net(x).shape)

    def scalar(arr: np.ndarray) -> float:
        return float(np.sum(net(arr) * probe))

    tape = Tape()
    xt = Tensor(x)
    out = net.forward(xt, tape)
    readout = _weighted_sum(out, probe, tape)
    analytic = tape.backward(readout).wrt(xt)
    numeric = ad.numeric_gradient(scalar, x, step=step)
    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    max_rel = float(rel.max())
    return FiniteDiffReport(passed=max_rel < tolerance, max_rel_error=max_rel,
                            tolerance=tolerance)


def _weighted_sum(x: Tensor, weights: np.ndarray, tape: Tape | None) -> Tensor:
    out = Tensor(np.array(np.sum(x.data * weights)))
    if tape is not None:
        tape._record(out, (x,), lambda g: (g * weights,))
    return out
