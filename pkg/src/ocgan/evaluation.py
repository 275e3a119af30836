"""Reconstruction metrics and the thresholded correct/incorrect accounting.

Images are compared in normalized [-1, 1] units, channels first (C x H x W)
with an H x W boolean mask.  Masked metrics average over every channel of
every masked pixel.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .data import ImagePair, denormalize, normalize
from .imageio import save_image

DEFAULT_THRESHOLD = 0.25


def _check(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if mask.shape != a.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} does not match image plane {a.shape[-2:]}")
    if not mask.any():
        raise ValueError("mask has no occluded pixels; masked mean is undefined")
    return mask


def masked_l1(reconstructed: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    mask = _check(reconstructed, truth, mask)
    diff = np.abs(np.asarray(reconstructed, dtype=np.float64) - np.asarray(truth, dtype=np.float64))
    return float(diff[..., mask].mean())


def masked_l2(reconstructed: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Root-mean-square error over masked pixels."""
    mask = _check(reconstructed, truth, mask)
    diff = np.asarray(reconstructed, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return float(np.sqrt((diff[..., mask] ** 2).mean()))


def full_l1(reconstructed: np.ndarray, truth: np.ndarray) -> float:
    a, b = np.asarray(reconstructed, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def identity_baseline(x: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Masked L1 of the occluded input itself: the score of leaving the occlusion in place."""
    return masked_l1(x, truth, mask)


@dataclass
class EvalRow:
    pair_id: str
    masked_l1: float
    masked_l2: float
    full_l1: float
    baseline_masked_l1: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def mean(self, name: str) -> float:
        # fixed left-to-right summation order
        vals = [getattr(r, name) for r in self.rows]
        total = 0.0
        for v in vals:
            total += v
        return total / len(vals)

    def median(self, name: str) -> float:
        return float(np.median(self.column(name)))

    def summary(self) -> dict[str, float]:
        out = {}
        for name in ("masked_l1", "masked_l2", "full_l1", "baseline_masked_l1"):
            out[f"mean_{name}"] = self.mean(name)
            out[f"median_{name}"] = self.median(name)
        out["error_rate"] = error_rate(self, self.threshold)
        return out

    def to_tsv(self) -> str:
        cols = [f.name for f in fields(EvalRow)]
        lines = ["\t".join(cols)]
        for r in self.rows:
            lines.append("\t".join([r.pair_id] + [repr(getattr(r, c)) for c in cols[1:]]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str, threshold: float = DEFAULT_THRESHOLD) -> "EvalReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        cols = [f.name for f in fields(EvalRow)]
        if not lines or lines[0].split("\t") != cols:
            raise ValueError(f"report header must be {cols}")
        rows = []
        for ln in lines[1:]:
            parts = ln.split("\t")
            rows.append(EvalRow(parts[0], *(float(p) for p in parts[1:])))
        return cls(rows, threshold)


def error_rate(report: EvalReport, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of pairs whose masked L1 exceeds ``threshold``; ties count as correct."""
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if not report.rows:
        raise ValueError("cannot compute an error rate over an empty report")
    wrong = sum(1 for r in report.rows if r.masked_l1 > threshold)
    return wrong / len(report.rows)


Reconstructor = Callable[[np.ndarray], np.ndarray]


def evaluate(
    pairs: list[ImagePair],
    reconstruct: Reconstructor,
    threshold: float = DEFAULT_THRESHOLD,
    grid_dir: str | os.PathLike | None = None,
) -> EvalReport:
    """Score ``reconstruct`` (C x H x W normalized in, same out) on every pair.

    With ``grid_dir``, each pair also gets an input | reconstruction | truth
    strip written as ``<pair_id>_grid.ppm``.
    """
    if not pairs:
        raise ValueError("evaluation split is empty")
    report = EvalReport(threshold=threshold)
    if grid_dir is not None:
        Path(grid_dir).mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(pairs):
        x, y = normalize(pair.x), normalize(pair.y)
        r = np.asarray(reconstruct(x))
        pid = pair.pair_id or f"pair_{i:05d}"
        report.rows.append(EvalRow(
            pid,
            masked_l1(r, y, pair.mask),
            masked_l2(r, y, pair.mask),
            full_l1(r, y),
            identity_baseline(x, y, pair.mask),
        ))
        if grid_dir is not None:
            save_image(Path(grid_dir) / f"{pid}_grid.ppm", comparison_grid(pair.x, denormalize(r), pair.y))
    return report


def comparison_grid(x: np.ndarray, reconstructed: np.ndarray, truth: np.ndarray, gap: int = 2) -> np.ndarray:
    """Side-by-side H x (3W + 2 gap) x 3 strip: occluded input, reconstruction, truth."""
    h = x.shape[0]
    spacer = np.full((h, gap, 3), 255, dtype=np.uint8)
    return np.concatenate([x, spacer, reconstructed, spacer, truth], axis=1)


def generator_reconstructor(gen) -> Reconstructor:
    from .training import reconstruct_batch

    return lambda x: reconstruct_batch(gen, x[None])[0]
