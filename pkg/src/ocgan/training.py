"""Alternating discriminator/generator training.

All randomness derives from ``TrainingConfig.seed`` through fixed streams:

* generator init ``[seed, 5]``, discriminator init ``[seed, 6]``
* epoch ``e`` shuffle ``[seed, 3, e]``
* dropout for step ``s`` of epoch ``e`` ``[seed, 4, e, s]``

so the seed state after epoch ``k`` is fully described by ``(seed, k)`` and a
run resumed from a checkpoint replays the uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .data import ImagePair, pairs_to_batch
from .networks import (
    Discriminator,
    DiscriminatorSpec,
    UNetGenerator,
    UNetSpec,
    build_discriminator,
    build_unet,
    discriminator_forward,
    generator_forward,
)
from .optim import AdamState, adam_step
from .tensor import FLOAT32, Tensor, backward, no_grad, zero_grads

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, step: int, values: dict):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}: {values}")
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 1
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    l1_weight: float = 100.0
    seed: int = 0
    checkpoint_every: int = 0  # 0: only at completion
    saturating_loss: bool = False
    generator: UNetSpec = UNetSpec()
    discriminator: DiscriminatorSpec = DiscriminatorSpec()

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l1_weight < 0:
            raise ValueError(f"l1_weight must be >= 0, got {self.l1_weight}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")

    def adam_hyper(self) -> dict:
        return dict(learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)

    def to_text(self) -> str:
        """Dotted ``key = value`` lines; :meth:`from_text` inverts this exactly."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("generator", "discriminator"):
                for k, v in asdict(value).items():
                    lines.append(f"{f.name}.{k} = {_fmt(v)}")
            else:
                lines.append(f"train.{f.name} = {_fmt(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingConfig":
        values: dict = {}
        sub: dict = {"generator": {}, "discriminator": {}}
        for raw in text.splitlines():
            if not raw.strip():
                continue
            key, _, value = (s.strip() for s in raw.partition("="))
            section, _, name = key.partition(".")
            if section == "train":
                values[name] = value
            elif section in sub:
                sub[section][name] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        kwargs = {f.name: _parse(f.type, values[f.name]) for f in fields(cls) if f.name in values}
        kwargs["generator"] = UNetSpec(**{f.name: _parse(f.type, sub["generator"][f.name])
                                          for f in fields(UNetSpec) if f.name in sub["generator"]})
        kwargs["discriminator"] = DiscriminatorSpec(**{f.name: _parse(f.type, sub["discriminator"][f.name])
                                                       for f in fields(DiscriminatorSpec)
                                                       if f.name in sub["discriminator"]})
        return cls(**kwargs)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(annotation, text: str):
    ann = str(annotation)
    if "tuple" in ann:
        return tuple(int(t) for t in text.split(",") if t.strip())
    if ann == "bool":
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text.lower() == "true"
    if ann == "int":
        return int(text)
    if ann == "float":
        return float(text)
    return text


@dataclass
class EpochLosses:
    epoch: int
    discriminator_loss: float
    generator_adversarial_loss: float
    generator_l1: float
    accuracy_real: float
    accuracy_fake: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


@dataclass
class LossReport:
    rows: list[EpochLosses] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def to_tsv(self) -> str:
        cols = [f.name for f in fields(EpochLosses)]
        out = ["\t".join(cols)]
        for r in self.rows:
            out.append("\t".join(_fmt(getattr(r, c)) for c in cols))
        return "\n".join(out) + "\n"


@dataclass
class Models:
    generator: UNetGenerator
    discriminator: Discriminator
    gen_state: AdamState
    disc_state: AdamState
    epoch: int = 0


def init_models(config: TrainingConfig, dtype=FLOAT32) -> Models:
    gen, gparams = build_unet(config.generator, [config.seed, 5], dtype)
    disc, dparams = build_discriminator(config.discriminator, [config.seed, 6], dtype)
    return Models(gen, disc,
                  AdamState.for_params(gparams, **config.adam_hyper()),
                  AdamState.for_params(dparams, **config.adam_hyper()))


def _step_stats(d_real: np.ndarray, d_fake: np.ndarray) -> tuple[float, float]:
    return float((d_real > 0.5).mean()), float((d_fake < 0.5).mean())


def discriminator_step(disc: Discriminator, state: AdamState, real: Tensor, fake: Tensor,
                       x: Tensor) -> tuple[Tensor, float, float]:
    """One Adam update of ``disc`` on real (real, x) against fake (fake, x).

    Returns the pre-update loss and accuracies on reals and fakes.
    """
    d_real = discriminator_forward(disc, real, x)
    d_fake = discriminator_forward(disc, fake, x)
    d_loss = losses.discriminator_loss(d_real, d_fake)
    zero_grads(disc.params.values())
    backward(d_loss)
    adam_step(disc.params, state)
    acc_real, acc_fake = _step_stats(d_real.data, d_fake.data)
    return d_loss, acc_real, acc_fake


def train_step(
    x: Tensor, y: Tensor, models: Models, config: TrainingConfig, dropout_seed, *,
    freeze_generator: bool = False, epoch: int = 0, step: int = 0,
) -> dict:
    """One discriminator update on (y, x) vs detached (G(x), x), then one generator update.

    Returns the step's losses and discriminator accuracies.
    """
    gen, disc = models.generator, models.discriminator
    fake = generator_forward(gen, x, "train", dropout_seed)
    d_loss, acc_real, acc_fake = discriminator_step(disc, models.disc_state, y, fake.detach(), x)

    d_on_fake = discriminator_forward(disc, fake, x)
    g_adv = losses.generator_adversarial_loss(d_on_fake, config.saturating_loss)
    g_l1 = losses.l1_loss(fake, y)
    if not freeze_generator:
        g_total = g_adv + g_l1 * float(config.l1_weight) if config.l1_weight else g_adv
        zero_grads(gen.params.values())
        backward(g_total)
        adam_step(gen.params, models.gen_state)

    values = {
        "discriminator_loss": d_loss.item(),
        "generator_adversarial_loss": g_adv.item(),
        "generator_l1": g_l1.item(),
        "accuracy_real": acc_real,
        "accuracy_fake": acc_fake,
    }
    if not all(math.isfinite(v) for v in values.values()):
        raise NonFiniteLossError(epoch, step, values)
    return values


EpochCallback = Callable[[int, Models, EpochLosses], None]


def train(
    pairs: list[ImagePair],
    config: TrainingConfig,
    *,
    models: Models | None = None,
    checkpoint_dir: str | Path | None = None,
    on_epoch_end: EpochCallback | None = None,
    dtype=FLOAT32,
) -> tuple[Models, LossReport]:
    """Train on ``pairs`` until ``config.epochs``.

    Pass ``models`` (e.g. from :func:`ocgan.checkpoint.models_from_checkpoint`)
    to resume; training continues at ``models.epoch + 1``.
    """
    from .checkpoint import Checkpoint, save_checkpoint

    if not pairs:
        raise ValueError("training split is empty")
    if models is None:
        models = init_models(config, dtype)
    x_all, y_all, _ = pairs_to_batch(pairs, dtype)
    n = len(pairs)
    report = LossReport()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def write_checkpoint():
        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / f"epoch_{models.epoch}.ogck", Checkpoint.from_models(models, config))

    for epoch in range(models.epoch + 1, config.epochs + 1):
        order = np.random.default_rng([config.seed, 3, epoch]).permutation(n)
        sums = dict.fromkeys(("discriminator_loss", "generator_adversarial_loss", "generator_l1",
                              "accuracy_real", "accuracy_fake"), 0.0)
        steps = 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            vals = train_step(Tensor(x_all[idx]), Tensor(y_all[idx]), models, config,
                              [config.seed, 4, epoch, step], epoch=epoch, step=step)
            for k, v in vals.items():
                sums[k] += v
            steps += 1
        row = EpochLosses(epoch, **{k: v / steps for k, v in sums.items()})
        report.rows.append(row)
        models.epoch = epoch
        logger.info("epoch %d: D %.4f  G_adv %.4f  L1 %.4f  acc %.2f/%.2f", epoch, row.discriminator_loss,
                    row.generator_adversarial_loss, row.generator_l1, row.accuracy_real, row.accuracy_fake)
        if on_epoch_end is not None:
            on_epoch_end(epoch, models, row)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0 and epoch != config.epochs:
            write_checkpoint()
    write_checkpoint()
    return models, report


def reconstruct_batch(gen: UNetGenerator, x: np.ndarray) -> np.ndarray:
    """Infer-mode generator on an N x 3 x H x W array."""
    with no_grad():
        return generator_forward(gen, Tensor(x, dtype=gen.params["enc0.weight"].dtype), "infer").data


def params_snapshot(params: "OrderedDict[str, Tensor]") -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}
