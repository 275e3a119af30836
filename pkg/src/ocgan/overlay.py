"""Composite reconstructions onto the occluded input and time the pipeline."""

from __future__ import annotations

import time
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from .data import denormalize, normalize
from .tensor import Tensor, no_grad
from .networks import UNetGenerator, generator_forward


def composite_overlay(image: np.ndarray, reconstructed: np.ndarray, mask: np.ndarray, alpha: float,
                      full_frame: bool = False) -> np.ndarray:
    """Blend ``alpha * reconstructed + (1 - alpha) * image`` inside the mask.

    Pixels outside the mask are copied from ``image`` untouched (unless
    ``full_frame``).  Works on H x W x C arrays of any dtype; integer images
    are rounded back to their dtype.  ``mask`` is H x W.
    """
    image = np.asarray(image)
    reconstructed = np.asarray(reconstructed)
    mask = np.asarray(mask, dtype=bool)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if image.shape != reconstructed.shape:
        raise ValueError(f"input {image.shape} and reconstruction {reconstructed.shape} are misaligned")
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} is misaligned with image {image.shape}")
    blend = alpha * reconstructed.astype(np.float64) + (1.0 - alpha) * image.astype(np.float64)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        blend = np.clip(np.rint(blend), info.min, info.max)
    blend = blend.astype(image.dtype)
    if full_frame:
        return blend
    region = mask[..., None] if image.ndim == 3 else mask
    return np.where(region, blend, image)


def reconstruct(gen: UNetGenerator, x: np.ndarray) -> np.ndarray:
    """Infer-mode reconstruction of one uint8 H x W x 3 occluded image."""
    if x.ndim != 3 or x.shape[2] != gen.spec.input_channels:
        raise ValueError(f"expected an H x W x {gen.spec.input_channels} image, got shape {x.shape}")
    dtype = gen.params["enc0.weight"].dtype
    with no_grad():
        out = generator_forward(gen, Tensor(normalize(x, dtype)[None], dtype=dtype), "infer")
    return denormalize(out.data[0])


@dataclass
class OverlayResult:
    reconstructed: np.ndarray
    composite: np.ndarray
    forward_ms: float
    composite_ms: float

    @property
    def total_ms(self) -> float:
        return self.forward_ms + self.composite_ms


def run_overlay(gen: UNetGenerator, x: np.ndarray, mask: np.ndarray, alpha: float = 1.0) -> OverlayResult:
    t0 = time.perf_counter()
    rec = reconstruct(gen, x)
    t1 = time.perf_counter()
    comp = composite_overlay(x, rec, mask, alpha)
    t2 = time.perf_counter()
    return OverlayResult(rec, comp, (t1 - t0) * 1e3, (t2 - t1) * 1e3)


@dataclass
class StageLatency:
    median_ms: float
    p95_ms: float


def summarize(samples: list[float]) -> StageLatency:
    arr = np.asarray(samples, dtype=np.float64)
    return StageLatency(float(np.median(arr)), float(np.percentile(arr, 95)))


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1)


def measure_latency(gen: UNetGenerator, x: np.ndarray, mask: np.ndarray | None = None, repetitions: int = 30,
                    alpha: float = 1.0) -> dict[str, StageLatency]:
    """Median and p95 wall-clock milliseconds of forward, composite and total.

    One warm-up pass runs first and is excluded; BLAS is pinned to one thread.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    if mask is None:
        mask = np.ones(x.shape[:2], dtype=bool)
    forward, composite, total = [], [], []
    with _single_thread():
        run_overlay(gen, x, mask, alpha)
        for _ in range(repetitions):
            res = run_overlay(gen, x, mask, alpha)
            forward.append(res.forward_ms)
            composite.append(res.composite_ms)
            total.append(res.total_ms)
    return {"forward": summarize(forward), "composite": summarize(composite), "total": summarize(total)}


def format_latency(summary: dict[str, StageLatency]) -> str:
    return "".join(f"{stage}\t{s.median_ms:.3f}\t{s.p95_ms:.3f}\n" for stage, s in summary.items())
