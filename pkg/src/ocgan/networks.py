"""U-Net generator and conditional convolutional discriminator.

Generator, for ``depth`` levels with encoder widths ``w_i = base_width * 2**i``::

    enc_0     = lrelu(conv(x))                          3   -> w_0,  H/2
    enc_i     = lrelu(norm(conv(enc_{i-1})))            w_{i-1} -> w_i, H/2**(i+1)
    up_{d-2}  = relu(norm(convT(enc_{d-1})))            w_{d-1} -> w_{d-1}
    up_i      = relu(norm(convT(cat(up_{i+1}, enc_{i+1}))))   w_{i+2}+w_{i+1} -> w_{i+1}
    out       = tanh(convT(cat(up_0, enc_0)))           w_1+w_0 -> 3,    H

so decoder level ``i`` consumes its own upsampled features stacked with the
encoder output at the same resolution.  All (transposed) convolutions use a
4x4 kernel, stride 2, padding 1.  Train-mode dropout after each inner decoder
block supplies the generator's stochastic input.

Parameter counts (k = 16 taps per 4x4 kernel, norm layers carry gain+shift)::

    encoder:  3*w_0*k + w_0  +  sum_{i>=1} (w_{i-1}*w_i*k + 3*w_i)
    decoder:  w_{d-1}*w_{d-1}*k + 3*w_{d-1}
              + sum_{i=0}^{d-3} ((w_{i+2}+w_{i+1})*w_{i+1}*k + 3*w_{i+1})
              + (w_1+w_0)*3*k + 3

Discriminator: ``cat(y, x)`` (6 channels) through stride-2 4x4 convolutions of
the configured widths (leaky ReLU, instance norm after the first), a final 3x3
stride-1 convolution to one logit map, global average, sigmoid.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import FLOAT32, Tensor

KERNEL = 4
ModelParams = "OrderedDict[str, Tensor]"


@dataclass(frozen=True)
class UNetSpec:
    input_channels: int = 3
    output_channels: int = 3
    base_width: int = 16
    depth: int = 3
    dropout_rate: float = 0.5
    encoder_slope: float = 0.2
    norm_epsilon: float = 1e-5

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"UNetSpec.depth must be >= 2, got {self.depth}")
        if self.base_width < 1:
            raise ValueError(f"UNetSpec.base_width must be positive, got {self.base_width}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"UNetSpec.dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def encoder_widths(self) -> list[int]:
        return [self.base_width * 2**i for i in range(self.depth)]

    def decoder_inputs(self) -> list[tuple[int, int]]:
        """(upsampled, skip) channel pairs consumed at each skip junction, deepest first."""
        w = self.encoder_widths
        return [(w[i + 1], w[i]) for i in range(self.depth - 2, -1, -1)]


@dataclass(frozen=True)
class DiscriminatorSpec:
    input_channels: int = 6
    widths: tuple[int, ...] = (16, 32, 64)
    slope: float = 0.2
    norm_epsilon: float = 1e-5

    def __post_init__(self):
        if not self.widths:
            raise ValueError("DiscriminatorSpec.widths must be non-empty")


def _init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class _Builder:
    def __init__(self, seed, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, arr: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = Tensor(arr, requires_grad=True, dtype=self.dtype, name=name)

    def conv(self, name: str, cin: int, cout: int, k: int = KERNEL) -> None:
        self.add(f"{name}.weight", _init(self.rng, (cout, cin, k, k), cin * k * k, self.dtype))
        self.add(f"{name}.bias", np.zeros(cout, dtype=self.dtype))

    def conv_t(self, name: str, cin: int, cout: int, k: int = KERNEL) -> None:
        # each output pixel of a stride-2 transposed conv sees cin * k*k/4 taps
        self.add(f"{name}.weight", _init(self.rng, (cin, cout, k, k), max(1, cin * k * k // 4), self.dtype))
        self.add(f"{name}.bias", np.zeros(cout, dtype=self.dtype))

    def norm(self, name: str, c: int) -> None:
        self.add(f"{name}.gain", np.ones(c, dtype=self.dtype))
        self.add(f"{name}.shift", np.zeros(c, dtype=self.dtype))


@dataclass
class UNetGenerator:
    spec: UNetSpec
    params: "OrderedDict[str, Tensor]" = field(repr=False)

    def __call__(self, x: Tensor, mode: str = "infer", seed=None, skip_ablation: int | None = None) -> Tensor:
        return generator_forward(self, x, mode, seed, skip_ablation)


@dataclass
class Discriminator:
    spec: DiscriminatorSpec
    params: "OrderedDict[str, Tensor]" = field(repr=False)

    def __call__(self, y: Tensor, x: Tensor) -> Tensor:
        return discriminator_forward(self, y, x)


def build_unet(spec: UNetSpec, seed=0, dtype=FLOAT32) -> tuple[UNetGenerator, "OrderedDict[str, Tensor]"]:
    """Construct a generator with fan-in scaled normal weights drawn from ``seed``."""
    b = _Builder(seed, dtype)
    w = spec.encoder_widths
    d = spec.depth
    b.conv("enc0", spec.input_channels, w[0])
    for i in range(1, d):
        b.conv(f"enc{i}", w[i - 1], w[i])
        b.norm(f"enc{i}.norm", w[i])
    b.conv_t(f"dec{d - 2}", w[d - 1], w[d - 1])
    b.norm(f"dec{d - 2}.norm", w[d - 1])
    for i in range(d - 3, -1, -1):
        b.conv_t(f"dec{i}", w[i + 2] + w[i + 1], w[i + 1])
        b.norm(f"dec{i}.norm", w[i + 1])
    b.conv_t("out", w[1] + w[0], spec.output_channels)
    gen = UNetGenerator(spec, b.params)
    return gen, gen.params


def unet_param_count(spec: UNetSpec) -> int:
    """Closed-form parameter count; see the module docstring."""
    k = KERNEL * KERNEL
    w = spec.encoder_widths
    d = spec.depth
    n = spec.input_channels * w[0] * k + w[0]
    n += sum(w[i - 1] * w[i] * k + 3 * w[i] for i in range(1, d))
    n += w[d - 1] * w[d - 1] * k + 3 * w[d - 1]
    n += sum((w[i + 2] + w[i + 1]) * w[i + 1] * k + 3 * w[i + 1] for i in range(d - 2))
    n += (w[1] + w[0]) * spec.output_channels * k + spec.output_channels
    return n


def _dropout_seed(seed, layer: int):
    base = seed if isinstance(seed, (list, tuple)) else [seed]
    return [*base, layer]


def generator_forward(
    gen: UNetGenerator, x: Tensor, mode: str = "infer", seed=None, skip_ablation: int | None = None
) -> Tensor:
    """Map an occluded image batch N x 3 x H x W to a reconstruction of the same shape.

    ``mode="train"`` enables dropout, seeded from ``seed`` (required then);
    ``mode="infer"`` is deterministic.  ``skip_ablation`` zeroes the skip
    tensor from that encoder level (diagnostics only).
    """
    spec, p = gen.spec, gen.params
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.ndim != 4 or x.shape[1] != spec.input_channels:
        raise ValueError(f"generator expects N x {spec.input_channels} x H x W input, got {x.shape}")
    factor = 2**spec.depth
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ValueError(
            f"generator input spatial extent {x.shape[2]}x{x.shape[3]} is not divisible by 2**depth = {factor}"
        )
    if x.dtype != p["enc0.weight"].dtype:
        raise TypeError(f"generator input dtype {x.dtype} does not match parameters {p['enc0.weight'].dtype}")
    if mode == "train" and spec.dropout_rate > 0 and seed is None:
        raise ValueError("train mode needs a dropout seed")

    d = spec.depth
    slope = spec.encoder_slope
    eps = spec.norm_epsilon

    skips = []
    h = ops.leaky_relu(ops.conv2d(x, p["enc0.weight"], p["enc0.bias"], 2, 1), slope)
    skips.append(h)
    for i in range(1, d):
        h = ops.conv2d(h, p[f"enc{i}.weight"], p[f"enc{i}.bias"], 2, 1)
        h = ops.leaky_relu(ops.instance_norm(h, p[f"enc{i}.norm.gain"], p[f"enc{i}.norm.shift"], eps), slope)
        skips.append(h)

    for i in range(d - 2, -1, -1):
        h = ops.conv_transpose2d(h, p[f"dec{i}.weight"], p[f"dec{i}.bias"], 2, 1)
        h = ops.relu(ops.instance_norm(h, p[f"dec{i}.norm.gain"], p[f"dec{i}.norm.shift"], eps))
        if mode == "train" and spec.dropout_rate > 0:
            h = ops.dropout(h, spec.dropout_rate, _dropout_seed(seed, i))
        skip = skips[i]
        if skip_ablation == i:
            skip = Tensor._wrap(np.zeros_like(skip.data))
        h = ops.concat_channels(h, skip)
    out = ops.conv_transpose2d(h, p["out.weight"], p["out.bias"], 2, 1)
    return ops.tanh(out)


def build_discriminator(
    spec: DiscriminatorSpec, seed=0, dtype=FLOAT32
) -> tuple[Discriminator, "OrderedDict[str, Tensor]"]:
    b = _Builder(seed, dtype)
    cin = spec.input_channels
    for i, width in enumerate(spec.widths):
        b.conv(f"layer{i}", cin, width)
        if i > 0:
            b.norm(f"layer{i}.norm", width)
        cin = width
    b.conv("logit", cin, 1, k=3)
    disc = Discriminator(spec, b.params)
    return disc, disc.params


def discriminator_param_count(spec: DiscriminatorSpec) -> int:
    k = KERNEL * KERNEL
    n, cin = 0, spec.input_channels
    for i, width in enumerate(spec.widths):
        n += cin * width * k + width + (2 * width if i > 0 else 0)
        cin = width
    return n + cin * 9 + 1


def discriminator_logits(disc: Discriminator, y: Tensor, x: Tensor) -> Tensor:
    if y.shape != x.shape:
        raise ValueError(f"discriminator: candidate shape {y.shape} does not match condition shape {x.shape}")
    spec, p = disc.spec, disc.params
    h = ops.concat_channels(y, x)
    if h.shape[1] != spec.input_channels:
        raise ValueError(f"discriminator expects {spec.input_channels} stacked channels, got {h.shape[1]}")
    for i in range(len(spec.widths)):
        h = ops.conv2d(h, p[f"layer{i}.weight"], p[f"layer{i}.bias"], 2, 1)
        if i > 0:
            h = ops.instance_norm(h, p[f"layer{i}.norm.gain"], p[f"layer{i}.norm.shift"], spec.norm_epsilon)
        h = ops.leaky_relu(h, spec.slope)
    h = ops.conv2d(h, p["logit.weight"], p["logit.bias"], 1, 1)
    return ops.mean_per_sample(h)


def discriminator_forward(disc: Discriminator, y: Tensor, x: Tensor) -> Tensor:
    """Probability (N,) that ``y`` is the real image for condition ``x``."""
    return ops.sigmoid(discriminator_logits(disc, y, x))
