"""Procedural scenes, synthetic occlusion, corpus manifests and the seeded split.

Scenes show one propane-style tank (a horizontal capsule) with a flame plume
rising from it over a two-tone sky/ground gradient.  Rendering uses only
IEEE arithmetic and square roots on float64, so a (params, seed) pair gives
the same bytes on every platform.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .imageio import load_image, load_mask, save_image, save_mask

Range = tuple[float, float]

# (sky top, sky bottom, ground) triples; all well away from mid-gray
PALETTES = (
    ((12, 18, 48), (70, 40, 90), (40, 28, 18)),
    ((30, 10, 10), (120, 45, 20), (25, 35, 20)),
    ((5, 5, 15), (40, 40, 80), (60, 45, 25)),
    ((20, 45, 95), (200, 120, 60), (35, 60, 30)),
    ((60, 20, 60), (210, 90, 40), (30, 20, 35)),
)
TANK_COLORS = ((235, 235, 230), (200, 30, 30), (225, 215, 40), (40, 120, 200))


def _check_range(name: str, r: Range) -> None:
    if r[0] > r[1]:
        raise ValueError(f"degenerate range {name}={r!r}: lower bound exceeds upper bound")


@dataclass(frozen=True)
class SceneParams:
    """Ranges are fractions of the image side unless stated otherwise."""

    image_size: int = 64
    tank_center_x: Range = (0.3, 0.7)
    tank_center_y: Range = (0.6, 0.8)
    tank_radius: Range = (0.1, 0.16)
    tank_aspect: Range = (1.6, 2.6)  # body half-length / radius
    flame_height: Range = (0.3, 0.5)
    flame_width: Range = (0.4, 0.8)  # fraction of tank body length
    flame_hue: Range = (5.0, 50.0)  # degrees, red through yellow
    horizon: Range = (0.45, 0.65)
    palettes: tuple = PALETTES
    tank_colors: tuple = TANK_COLORS

    def validate(self) -> None:
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        for name in ("tank_center_x", "tank_center_y", "tank_radius", "tank_aspect",
                     "flame_height", "flame_width", "flame_hue", "horizon"):
            _check_range(name, getattr(self, name))
        if not self.palettes or not self.tank_colors:
            raise ValueError("palettes and tank_colors must be non-empty")


def generate_scene(params: SceneParams, seed: int) -> np.ndarray:
    """Render one H x W x 3 uint8 scene deterministically from ``seed``."""
    params.validate()
    rng = np.random.default_rng([seed, 0])
    s = params.image_size

    def draw(r: Range) -> float:
        return float(r[0] + (r[1] - r[0]) * rng.random())

    sky_top, sky_bottom, ground = (np.array(c, dtype=np.float64)
                                   for c in params.palettes[int(rng.integers(len(params.palettes)))])
    tank_color = np.array(params.tank_colors[int(rng.integers(len(params.tank_colors)))], dtype=np.float64)
    horizon = draw(params.horizon) * s
    cx, cy = draw(params.tank_center_x) * s, draw(params.tank_center_y) * s
    radius = draw(params.tank_radius) * s
    half_len = draw(params.tank_aspect) * radius
    flame_h = draw(params.flame_height) * s
    flame_w = draw(params.flame_width) * half_len
    hue_lo, hue_hi = sorted((draw(params.flame_hue), draw(params.flame_hue)))
    flame_dx = (rng.random() - 0.5) * half_len

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5
    img = np.empty((s, s, 3), dtype=np.float64)

    # sky gradient above the horizon, flat ground below
    t = np.clip(yy / max(horizon, 1.0), 0.0, 1.0)[..., None]
    img[:] = sky_top * (1 - t) + sky_bottom * t
    img[yy >= horizon] = ground

    # tank: capsule = body rectangle plus two end discs, with a simple vertical shade
    dx = np.maximum(np.abs(xx - cx) - half_len, 0.0)
    dy = yy - cy
    tank = dx * dx + dy * dy <= radius * radius
    shade = np.clip(1.0 - 0.35 * (dy / radius), 0.6, 1.2)[..., None]
    img = np.where(tank[..., None], np.clip(tank_color * shade, 0, 255), img)

    # flame: teardrop widest at the tank top, tapering to a tip flame_h above it
    base_y = cy - radius * 0.6
    fx = cx + flame_dx
    u = (base_y - yy) / flame_h  # 0 at base, 1 at tip
    half_w = flame_w * np.sqrt(np.clip(u, 0.0, 1.0)) * (1.0 - np.clip(u, 0.0, 1.0))
    flame = (u >= -0.05) & (u <= 1.0) & (np.abs(xx - fx) <= half_w * 1.3)
    hue = hue_hi + (hue_lo - hue_hi) * np.clip(u, 0.0, 1.0)
    # vectorised piecewise-linear hue in the red..yellow band (h in [0, 60))
    frac = np.clip(hue, 0.0, 59.999) / 60.0
    flame_rgb = np.stack([np.full_like(frac, 255.0), 255.0 * frac, np.full_like(frac, 30.0)], axis=-1)
    img = np.where(flame[..., None] & ~tank[..., None], flame_rgb, img)

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class OcclusionConfig:
    shapes: tuple[str, ...] = ("rectangle", "ellipse")
    count_range: tuple[int, int] = (1, 3)
    coverage_range: Range = (0.1, 0.4)
    fill_value: int = 128
    max_attempts: int = 1000

    def validate(self) -> None:
        if not self.shapes or any(sh not in ("rectangle", "ellipse") for sh in self.shapes):
            raise ValueError(f"occlusion shapes must be a non-empty subset of rectangle/ellipse, got {self.shapes}")
        lo, hi = self.count_range
        if not 1 <= lo <= hi:
            raise ValueError(f"occlusion count_range must satisfy 1 <= lo <= hi, got {self.count_range}")
        clo, chi = self.coverage_range
        if not 0.0 <= clo <= chi < 1.0:
            raise ValueError(f"coverage_range must satisfy 0 <= lo <= hi < 1, got {self.coverage_range}")
        if not 0 <= self.fill_value <= 255:
            raise ValueError(f"fill_value must lie in [0, 255], got {self.fill_value}")


class OcclusionError(RuntimeError):
    pass


@dataclass
class ImagePair:
    """x: occluded generator input, y: ground truth, mask: True where occluded."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    scene_seed: int | None = None
    occlusion_seed: int | None = None
    pair_id: str = ""

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


def _occluder(shape: str, h: int, w: int, rng: np.random.Generator, area: float) -> np.ndarray:
    aspect = rng.uniform(0.5, 2.0)
    if shape == "ellipse":
        area = area * 4.0 / math.pi
    bh = min(float(h), math.sqrt(area / aspect))
    bw = min(float(w), area / max(bh, 1.0))
    cy = rng.uniform(bh / 2, h - bh / 2) if bh < h else h / 2
    cx = rng.uniform(bw / 2, w - bw / 2) if bw < w else w / 2
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    if shape == "rectangle":
        return (np.abs(yy - cy) <= bh / 2) & (np.abs(xx - cx) <= bw / 2)
    return ((yy - cy) / (bh / 2)) ** 2 + ((xx - cx) / (bw / 2)) ** 2 <= 1.0


def synthesize_occlusion(y: np.ndarray, cfg: OcclusionConfig, seed: int) -> ImagePair:
    """Paint 1..n axis-aligned rectangles/ellipses with the fill value.

    Placements are re-drawn until the union's coverage falls inside
    ``cfg.coverage_range``.
    """
    cfg.validate()
    h, w = y.shape[:2]
    lo, hi = cfg.coverage_range
    if hi == 0.0:
        mask = np.zeros((h, w), dtype=bool)
        return ImagePair(y.copy(), y.copy(), mask, occlusion_seed=seed)
    rng = np.random.default_rng([seed, 1])
    for _ in range(cfg.max_attempts):
        count = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
        target = rng.uniform(lo, hi) * h * w
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(count):
            shape = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
            mask |= _occluder(shape, h, w, rng, target / count)
        coverage = mask.mean()
        if lo <= coverage <= hi:
            x = y.copy()
            x[mask] = cfg.fill_value
            return ImagePair(x, y.copy(), mask, occlusion_seed=seed)
    raise OcclusionError(f"no occluder placement reached the coverage range after {cfg.max_attempts} attempts; "
                         f"config={cfg!r}")


def normalize(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 H x W (x C) -> C x H x W floats in [-1, 1]."""
    arr = np.asarray(image, dtype=np.float64) / 127.5 - 1.0
    if arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(dtype)


def denormalize(arr: np.ndarray) -> np.ndarray:
    """C x H x W floats in [-1, 1] -> H x W x C uint8."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def pairs_to_batch(pairs: list[ImagePair], dtype=np.float32) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack pairs into (x, y, mask) arrays: N x 3 x H x W, N x 3 x H x W, N x H x W."""
    x = np.stack([normalize(p.x, dtype) for p in pairs])
    y = np.stack([normalize(p.y, dtype) for p in pairs])
    m = np.stack([p.mask for p in pairs])
    return x, y, m


def generate_pairs(count: int, scene: SceneParams = SceneParams(), occlusion: OcclusionConfig = OcclusionConfig(),
                   seed: int = 0) -> list[ImagePair]:
    """In-memory corpus: scene seeds ``seed .. seed+count-1``, occlusion seed equal to the scene seed."""
    pairs = []
    for i in range(count):
        s = seed + i
        pair = synthesize_occlusion(generate_scene(scene, s), occlusion, s)
        pair.scene_seed = s
        pair.pair_id = f"pair_{s:05d}"
        pairs.append(pair)
    return pairs


# ---------------------------------------------------------------------------
# manifests

SPLIT_TAGS = ("train", "test", "unassigned")
UNSET = "-"


@dataclass
class PairRecord:
    pair_id: str
    x_path: str = UNSET
    y_path: str = UNSET
    mask_path: str = UNSET
    scene_seed: str = UNSET
    occlusion_seed: str = UNSET
    split: str = "unassigned"

    def fields(self) -> list[str]:
        return [self.pair_id, self.x_path, self.y_path, self.mask_path,
                self.scene_seed, self.occlusion_seed, self.split]


@dataclass
class CorpusManifest:
    records: list[PairRecord] = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, split: str) -> list[PairRecord]:
        return [r for r in self.records if r.split == split]

    def resolve(self, rel: str) -> Path:
        if rel == UNSET:
            raise ValueError("manifest record has no path for this field")
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def load_pair(self, rec: PairRecord) -> ImagePair:
        if UNSET in (rec.x_path, rec.y_path, rec.mask_path):
            raise ValueError(f"record {rec.pair_id} has not been occluded yet")
        y = load_image(self.resolve(rec.y_path))
        x = load_image(self.resolve(rec.x_path))
        mask = load_mask(self.resolve(rec.mask_path))
        if x.shape != y.shape or mask.shape != y.shape[:2]:
            raise ValueError(f"record {rec.pair_id}: x {x.shape}, y {y.shape}, mask {mask.shape} misaligned")
        occ = None if rec.occlusion_seed == UNSET else int(rec.occlusion_seed)
        scene = None if rec.scene_seed == UNSET else int(rec.scene_seed)
        return ImagePair(x, y, mask, scene, occ, rec.pair_id)

    def load_split(self, split: str) -> list[ImagePair]:
        return [self.load_pair(r) for r in self.subset(split)]


def write_manifest(path: str | os.PathLike, manifest: CorpusManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for rec in manifest.records:
            writer.writerow(rec.fields())


def read_manifest(path: str | os.PathLike) -> CorpusManifest:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row:
                continue
            if len(row) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 tab-separated fields, got {len(row)}")
            if row[6] not in SPLIT_TAGS:
                raise ValueError(f"{path}:{lineno}: unknown split tag {row[6]!r}")
            records.append(PairRecord(*row))
    return CorpusManifest(records, Path(path).parent)


def split_corpus(manifest: CorpusManifest, train_fraction: float, seed: int) -> CorpusManifest:
    """Tag round(train_fraction * N) records as train by a seeded shuffle, the rest as test."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(manifest.records)
    if n == 0:
        raise ValueError("cannot split an empty manifest")
    n_train = int(math.floor(train_fraction * n + 0.5))
    order = np.random.default_rng([seed, 2]).permutation(n)
    train_idx = set(order[:n_train].tolist())
    records = [replace(r, split="train" if i in train_idx else "test") for i, r in enumerate(manifest.records)]
    return CorpusManifest(records, manifest.root)


def split_pairs(pairs: list[ImagePair], train_fraction: float, seed: int) -> tuple[list[ImagePair], list[ImagePair]]:
    """In-memory counterpart of :func:`split_corpus`, preserving corpus order in both halves."""
    manifest = CorpusManifest([PairRecord(str(i)) for i in range(len(pairs))])
    tagged = split_corpus(manifest, train_fraction, seed)
    train = [p for p, r in zip(pairs, tagged.records) if r.split == "train"]
    test = [p for p, r in zip(pairs, tagged.records) if r.split == "test"]
    return train, test


def write_scene_corpus(out_dir: str | os.PathLike, count: int, scene: SceneParams, seed: int) -> CorpusManifest:
    """Render ``count`` scenes into ``out_dir/corpus`` and return an un-occluded, unassigned manifest."""
    out = Path(out_dir)
    (out / "corpus").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(count):
        s = seed + i
        pid = f"pair_{s:05d}"
        rel = f"corpus/{pid}_y.ppm"
        save_image(out / rel, generate_scene(scene, s))
        records.append(PairRecord(pid, y_path=rel, scene_seed=str(s)))
    return CorpusManifest(records, out)


def occlude_corpus(manifest: CorpusManifest, cfg: OcclusionConfig, base_seed: int = 0) -> CorpusManifest:
    """Occlude every record's ground truth, writing x and mask files next to it.

    The occlusion seed is the record's scene seed, as in :func:`generate_pairs`;
    imported images without one use ``base_seed + index``.
    """
    records = []
    for i, rec in enumerate(manifest.records):
        y = load_image(manifest.resolve(rec.y_path))
        occ_seed = int(rec.scene_seed) if rec.scene_seed != UNSET else base_seed + i
        pair = synthesize_occlusion(y, cfg, occ_seed)
        x_rel = f"corpus/{rec.pair_id}_x.ppm"
        m_rel = f"corpus/{rec.pair_id}_mask.pgm"
        save_image(manifest.root / x_rel, pair.x)
        save_mask(manifest.root / m_rel, pair.mask)
        records.append(replace(rec, x_path=x_rel, mask_path=m_rel, occlusion_seed=str(occ_seed)))
    return CorpusManifest(records, manifest.root)
