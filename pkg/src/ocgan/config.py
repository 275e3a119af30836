"""Flat dotted-key run configuration: defaults < config file < command line."""

from __future__ import annotations

import os
from typing import Any

from .data import OcclusionConfig, SceneParams
from .networks import DiscriminatorSpec, UNetSpec
from .training import TrainingConfig


class ConfigError(ValueError):
    pass


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _csv_words(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low not in ("true", "false"):
        raise ValueError(f"expected true or false, got {text!r}")
    return low == "true"


# key -> (default, parser)
DEFAULTS: dict[str, tuple[Any, Any]] = {
    "seed": (0, int),
    "corpus.count": (100, int),
    "corpus.image_size": (64, int),
    "occlusion.shapes": (("rectangle", "ellipse"), _csv_words),
    "occlusion.count_min": (1, int),
    "occlusion.count_max": (3, int),
    "occlusion.coverage_lo": (0.1, float),
    "occlusion.coverage_hi": (0.4, float),
    "occlusion.fill": (128, int),
    "split.fraction": (0.8, float),
    "model.depth": (3, int),
    "model.base_width": (16, int),
    "model.dropout_rate": (0.5, float),
    "model.disc_widths": ((16, 32, 64), _csv_ints),
    "train.epochs": (200, int),
    "train.batch_size": (1, int),
    "train.learning_rate": (2e-4, float),
    "train.beta1": (0.5, float),
    "train.beta2": (0.999, float),
    "train.epsilon": (1e-8, float),
    "train.l1_weight": (100.0, float),
    "train.checkpoint_every": (0, int),
    "train.saturating_loss": (False, _bool),
    "infer.checkpoint": ("", str),
    "infer.split": ("test", str),
    "latency.repetitions": (30, int),
    "overlay.alpha": (1.0, float),
    "overlay.full_frame": (False, _bool),
    "eval.threshold": (0.25, float),
    "eval.grids": (True, _bool),
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        out[key] = value
    return out


class RunConfig:
    """Resolved configuration.  Unknown keys are rejected at every layer."""

    def __init__(self, file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None):
        self.values: dict[str, Any] = {k: d for k, (d, _) in DEFAULTS.items()}
        for layer in (file_values or {}, overrides or {}):
            for key, raw in layer.items():
                self.set(key, raw)

    def set(self, key: str, raw) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        parser = DEFAULTS[key][1]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None

    @classmethod
    def load(cls, path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> "RunConfig":
        file_values = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                file_values = parse_text(fh.read(), str(path))
        return cls(file_values, overrides)

    def __getitem__(self, key: str):
        return self.values[key]

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in sorted(self.values))

    def scene_params(self) -> SceneParams:
        return SceneParams(image_size=self["corpus.image_size"])

    def occlusion_config(self) -> OcclusionConfig:
        return OcclusionConfig(
            shapes=self["occlusion.shapes"],
            count_range=(self["occlusion.count_min"], self["occlusion.count_max"]),
            coverage_range=(self["occlusion.coverage_lo"], self["occlusion.coverage_hi"]),
            fill_value=self["occlusion.fill"],
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            learning_rate=self["train.learning_rate"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            epsilon=self["train.epsilon"],
            l1_weight=self["train.l1_weight"],
            seed=self["seed"],
            checkpoint_every=self["train.checkpoint_every"],
            saturating_loss=self["train.saturating_loss"],
            generator=UNetSpec(base_width=self["model.base_width"], depth=self["model.depth"],
                               dropout_rate=self["model.dropout_rate"]),
            discriminator=DiscriminatorSpec(widths=self["model.disc_widths"]),
        )
