"""Adversarial objectives for the conditional GAN.

All functions take discriminator probabilities (Tensors of shape (N,) or
plain floats) and return a scalar Tensor averaged over the batch.
Probabilities are clamped to ``[PROB_CLAMP, 1 - PROB_CLAMP]`` before any log.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import FLOAT64, Tensor

PROB_CLAMP = 1e-7


def _prob(p) -> Tensor:
    t = p if isinstance(p, Tensor) else Tensor(np.atleast_1d(np.asarray(p, dtype=FLOAT64)))
    return ops.clamp(t, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _log1m(p: Tensor) -> Tensor:
    return ops.log(ops.sub(1.0, p))


def discriminator_loss(d_real, d_fake) -> Tensor:
    """-[log D(y, x) + log(1 - D(G(x), x))], batch mean."""
    real, fake = _prob(d_real), _prob(d_fake)
    return ops.mul(ops.add(ops.mean(ops.log(real)), ops.mean(_log1m(fake))), -1.0)


def objective_value(d_real, d_fake) -> Tensor:
    """log D(y, x) + log(1 - D(G(x), x)) on a sample: the quantity D maximizes and G minimizes."""
    real, fake = _prob(d_real), _prob(d_fake)
    return ops.add(ops.mean(ops.log(real)), ops.mean(_log1m(fake)))


def generator_adversarial_loss(d_fake, saturating: bool = False) -> Tensor:
    fake = _prob(d_fake)
    if saturating:
        return ops.mean(_log1m(fake))
    return ops.mul(ops.mean(ops.log(fake)), -1.0)


def l1_loss(g_out: Tensor, y: Tensor) -> Tensor:
    if g_out.shape != y.shape:
        raise ValueError(f"l1_loss: generator output {g_out.shape} does not match target {y.shape}")
    return ops.mean(ops.abs(ops.sub(g_out, y)))


def generator_loss(d_fake, g_out: Tensor, y: Tensor, l1_weight: float, saturating: bool = False) -> Tensor:
    """-log D(G(x), x) + l1_weight * mean|G(x) - y|.

    With ``saturating=True`` the adversarial term is the literal
    ``log(1 - D(G(x), x))`` that the generator minimizes.
    """
    if l1_weight < 0:
        raise ValueError(f"l1_weight must be non-negative, got {l1_weight}")
    adv = generator_adversarial_loss(d_fake, saturating)
    if l1_weight == 0:
        return adv
    return ops.add(adv, ops.mul(l1_loss(g_out, y), float(l1_weight)))
