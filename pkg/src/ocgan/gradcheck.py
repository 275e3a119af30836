"""Central finite-difference checks of every differentiable operation (f64)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import losses, ops
from .networks import DiscriminatorSpec, UNetSpec, build_discriminator, build_unet, discriminator_forward, \
    generator_forward
from .tensor import FLOAT64, Tensor, backward

STEP = 1e-5
TOLERANCE = 1e-5
PROBES = 20


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@dataclass
class CheckResult:
    name: str
    probes: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], rng: np.random.Generator, probes: int = PROBES,
    step: float = STEP,
) -> float:
    """Compare backward() against central differences at ``probes`` random coordinates.

    ``fn`` must rebuild the scalar loss from the current contents of ``inputs``.
    Returns the largest relative error seen.
    """
    for t in inputs:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for k in range(probes):
        t = inputs[k % len(inputs)]
        idx = tuple(int(rng.integers(s)) for s in t.shape)
        old = t.data[idx]
        t.data[idx] = old + step
        plus = fn().item()
        t.data[idx] = old - step
        minus = fn().item()
        t.data[idx] = old
        numeric = (plus - minus) / (2 * step)
        worst = max(worst, relative_error(float(t.grad[idx]), numeric))
    return worst


def _leaf(rng, *shape, scale=1.0, offset=0.0) -> Tensor:
    return Tensor(offset + scale * rng.standard_normal(shape), requires_grad=True, dtype=FLOAT64)


def _away_from_zero(rng, *shape, margin=0.05) -> Tensor:
    # keeps probes off the kinks of relu/leaky_relu/abs
    v = rng.standard_normal(shape)
    v = np.where(np.abs(v) < margin, np.sign(v + 1e-12) * margin, v)
    return Tensor(v, requires_grad=True, dtype=FLOAT64)


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(weights, dtype=FLOAT64)))


def default_suite(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    suite = {}

    def proj(shape):
        return rng.standard_normal(shape)

    x, k, b = _leaf(rng, 2, 3, 7, 7), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    w1 = proj((2, 4, 4, 4))
    suite["conv2d"] = (lambda: _projected(ops.conv2d(x, k, b, 2, 1), w1), [x, k, b])

    xt, kt, bt = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 3, 2, 4, 4), _leaf(rng, 2)
    w2 = proj((2, 2, 8, 8))
    suite["conv_transpose2d"] = (lambda: _projected(ops.conv_transpose2d(xt, kt, bt, 2, 1), w2), [xt, kt, bt])

    for name, fn in (("relu", ops.relu), ("leaky_relu", lambda t: ops.leaky_relu(t, 0.2)),
                     ("abs", ops.abs)):
        a = _away_from_zero(rng, 3, 5)
        w = proj((3, 5))
        suite[name] = (lambda a=a, w=w, fn=fn: _projected(fn(a), w), [a])
    for name, fn in (("tanh", ops.tanh), ("sigmoid", ops.sigmoid)):
        a, w = _leaf(rng, 3, 5), proj((3, 5))
        suite[name] = (lambda a=a, w=w, fn=fn: _projected(fn(a), w), [a])
    a, w = _leaf(rng, 4, 6), proj((4, 6))
    suite["dropout"] = (lambda: _projected(ops.dropout(a, 0.3, 11), w), [a])

    xn, gn, sn = _leaf(rng, 2, 3, 4, 4), _leaf(rng, 3, offset=1.0), _leaf(rng, 3)
    wn = proj((2, 3, 4, 4))
    suite["instance_norm"] = (lambda: _projected(ops.instance_norm(xn, gn, sn, 1e-5), wn), [xn, gn, sn])

    ca, cb = _leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 3, 3, 3)
    wc = proj((1, 5, 3, 3))
    suite["concat_channels"] = (lambda: _projected(ops.concat_channels(ca, cb), wc), [ca, cb])

    sc = _leaf(rng, 1, 4, 2, 2)
    ws = proj((1, 2, 2, 2))
    suite["slice_channels"] = (lambda: _projected(ops.slice_channels(sc, 1, 3), ws), [sc])

    p, q = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    wa = proj((3, 4))
    suite["add_sub_mul"] = (lambda: _projected(ops.sub(ops.mul(ops.add(p, q), p), q), wa), [p, q])
    m = _leaf(rng, 2, 3, 4)
    suite["mean_per_sample"] = (lambda: _projected(ops.mean_per_sample(m), np.array([0.7, -1.3])), [m])
    lg = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=FLOAT64)
    wl = proj((3, 4))
    suite["log"] = (lambda: _projected(ops.log(lg), wl), [lg])

    pr = Tensor(rng.uniform(0.1, 0.9, 4), requires_grad=True, dtype=FLOAT64)
    pf = Tensor(rng.uniform(0.1, 0.9, 4), requires_grad=True, dtype=FLOAT64)
    suite["discriminator_loss"] = (lambda: losses.discriminator_loss(pr, pf), [pr, pf])
    go, gy = _leaf(rng, 1, 3, 4, 4), Tensor(rng.standard_normal((1, 3, 4, 4)), dtype=FLOAT64)
    gf = Tensor(rng.uniform(0.1, 0.9, 1), requires_grad=True, dtype=FLOAT64)
    suite["generator_loss"] = (lambda: losses.generator_loss(gf, go, gy, 1.5), [gf, go])

    # conv2d -> instance_norm -> leaky_relu -> mean
    px, pk, pb = _leaf(rng, 1, 2, 6, 6), _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    pg, ps = _leaf(rng, 3, offset=1.0), _leaf(rng, 3)
    suite["conv_norm_lrelu_mean"] = (
        lambda: ops.mean(ops.leaky_relu(ops.instance_norm(ops.conv2d(px, pk, pb, 1, 1), pg, ps), 0.2)),
        [px, pk, pb, pg, ps])

    gen, gparams = build_unet(UNetSpec(base_width=4, depth=2, dropout_rate=0.0), seed=3, dtype=FLOAT64)
    gx = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)), dtype=FLOAT64)
    suite["unet_generator"] = (lambda: ops.mean(generator_forward(gen, gx, "infer")), list(gparams.values()))

    disc, dparams = build_discriminator(DiscriminatorSpec(widths=(4, 8)), seed=4, dtype=FLOAT64)
    dy, dx = _leaf(rng, 1, 3, 8, 8), Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)), dtype=FLOAT64)
    suite["discriminator"] = (lambda: ops.mean(discriminator_forward(disc, dy, dx)), [dy, *dparams.values()])
    return suite


def run_suite(seed: int = 0, probes: int = PROBES) -> list[CheckResult]:
    rng = np.random.default_rng([seed, 99])
    results = []
    for name, (fn, inputs) in default_suite(seed).items():
        n = max(probes, len(inputs))
        results.append(CheckResult(name, n, check_gradients(fn, inputs, rng, n)))
    return results
