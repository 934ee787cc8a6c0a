"""Small generator / patch-discriminator pair for 32x32 RGB images."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .rng import SplitMix64
from .tensor import (
    ShapeError, Tensor, add, conv2d, instance_norm, leaky_relu, relu, stop_gradient, tanh,
    upsample_nearest,
)

IMAGE_SIZE = 32
NORM_EPS = 1e-5
LEAK = 0.2
INIT_STD = 0.02

# Frozen from the layer tables below; see tests/test_nets.py for the hand count.
GENERATOR_PARAM_COUNT = 47523
DISCRIMINATOR_PARAM_COUNT = 24353

ParamSet = list  # list[tuple[str, Tensor]], declaration order


class _Net:
    """Ordered bag of named parameter tensors."""

    def __init__(self, prefix: str, image_size: int = IMAGE_SIZE):
        self.prefix = prefix
        self.image_size = image_size
        self.params: OrderedDict[str, Tensor] = OrderedDict()

    def _conv(self, name: str, cout: int, cin: int, k: int = 3) -> None:
        self.params[f"{name}.weight"] = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True)

    def _norm(self, name: str, c: int) -> None:
        self.params[f"{name}.gain"] = Tensor(np.ones(c), requires_grad=True)
        self.params[f"{name}.shift"] = Tensor(np.zeros(c), requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def _check_input(self, x: Tensor) -> None:
        want = (3, self.image_size, self.image_size)
        if x.data.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"{self.prefix}: expected input (B,{want[0]},{want[1]},{want[2]}), got {x.shape}")

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())


class GeneratorNet(_Net):
    """conv-IN-relu, strided conv-IN-relu, 2 residual blocks, upsample+conv-IN-relu, conv-tanh."""

    def __init__(self, prefix: str = "G", image_size: int = IMAGE_SIZE):
        super().__init__(prefix, image_size)
        self._conv("enc1", 16, 3)
        self._norm("enc1.norm", 16)
        self._conv("enc2", 32, 16)
        self._norm("enc2.norm", 32)
        for r in ("res1", "res2"):
            self._conv(f"{r}.conv1", 32, 32)
            self._norm(f"{r}.norm1", 32)
            self._conv(f"{r}.conv2", 32, 32)
            self._norm(f"{r}.norm2", 32)
        self._conv("dec1", 16, 32)
        self._norm("dec1.norm", 16)
        self._conv("out", 3, 16)


class DiscriminatorNet(_Net):
    """Three strided conv stages (feature tap after the third) and a 1-channel score conv."""

    def __init__(self, prefix: str = "DX", image_size: int = IMAGE_SIZE):
        super().__init__(prefix, image_size)
        self._conv("c1", 16, 3)
        self._conv("c2", 32, 16)
        self._norm("c2.norm", 32)
        self._conv("c3", 64, 32)
        self._norm("c3.norm", 64)
        self._conv("score", 1, 64)


def _block(p, name, x, stride=1, norm=True):
    y = conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride=stride, pad=1)
    if norm:
        y = instance_norm(y, p[f"{name}.norm.gain"], p[f"{name}.norm.shift"], NORM_EPS)
    return y


def generator_forward(net: GeneratorNet, x: Tensor, frozen: bool = False) -> Tensor:
    net._check_input(x)
    p = frozen_params(net) if frozen else net.params
    h = relu(_block(p, "enc1", x))
    h = relu(_block(p, "enc2", h, stride=2))
    for r in ("res1", "res2"):
        y = conv2d(h, p[f"{r}.conv1.weight"], p[f"{r}.conv1.bias"], pad=1)
        y = relu(instance_norm(y, p[f"{r}.norm1.gain"], p[f"{r}.norm1.shift"], NORM_EPS))
        y = conv2d(y, p[f"{r}.conv2.weight"], p[f"{r}.conv2.bias"], pad=1)
        y = instance_norm(y, p[f"{r}.norm2.gain"], p[f"{r}.norm2.shift"], NORM_EPS)
        h = add(h, y)
    h = upsample_nearest(h, 2)
    h = relu(_block(p, "dec1", h))
    return tanh(conv2d(h, p["out.weight"], p["out.bias"], pad=1))


def frozen_params(net: _Net) -> dict[str, Tensor]:
    """Value copies of ``net``'s parameters that no gradient can reach."""
    return {k: stop_gradient(v) for k, v in net.params.items()}


def frozen_copy(net: _Net) -> _Net:
    """Detached deep copy: same values, parameters never require grad."""
    clone = net.__class__.__new__(net.__class__)
    clone.prefix, clone.image_size = net.prefix, net.image_size
    clone.params = OrderedDict((k, Tensor(v.data.copy())) for k, v in net.params.items())
    return clone


def discriminator_forward(net: DiscriminatorNet, img: Tensor, frozen: bool = False) -> tuple[Tensor, Tensor]:
    """Return (raw patch scores, feature tap).

    With ``frozen=True`` every parameter is read through ``stop_gradient`` so
    gradients reach ``img`` but never the discriminator.
    """
    net._check_input(img)
    p = frozen_params(net) if frozen else net.params
    h = leaky_relu(_block(p, "c1", img, stride=2, norm=False), LEAK)
    h = leaky_relu(_block(p, "c2", h, stride=2), LEAK)
    features = leaky_relu(_block(p, "c3", h, stride=2), LEAK)
    scores = conv2d(features, p["score.weight"], p["score.bias"], pad=1)
    return scores, features


def init_params(net: _Net, seed: int) -> None:
    """Kernels ~ N(0, 0.02^2) from a seeded stream; biases/shifts 0; gains 1."""
    rng = SplitMix64(seed)
    for name, t in net.params.items():
        if name.endswith(".weight"):
            t.data[...] = INIT_STD * rng.normal(t.shape)
        elif name.endswith(".gain"):
            t.data[...] = 1.0
        else:
            t.data[...] = 0.0
        t.zero_grad()


def collect_params(net: _Net) -> ParamSet:
    return [(f"{net.prefix}.{name}", t) for name, t in net.params.items()]
