"""Versioned little-endian binary checkpoints (``.ogck``).

Layout::

    b"OGCK"  u32 version=1  u64 epoch
    u32 config_len  config_len bytes of UTF-8 config text
    u32 n_params    n_params tensor records      (G/<name>, then D/<name>)
    u32 n_state     n_state tensor records       (optimizer state)

    record: u16 name_len, name (UTF-8), u8 rank, rank x u32 extents,
            u8 dtype tag, raw element bytes

Dtype tags: 0 = f32, 1 = f64, 2 = u64.  Optimizer state uses the names
``G.adam/step`` (rank-0 u64), ``G.adam/m/<param>``, ``G.adam/v/<param>`` and
the same under ``D.adam``.  The random-stream state is implied by the seed in
the config text plus the epoch counter.
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .networks import Discriminator, UNetGenerator, build_discriminator, build_unet
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"OGCK"
VERSION = 1
DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<u8"): 2}
TAG_DTYPES = {v: k for k, v in DTYPE_TAGS.items()}


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    epoch: int
    config_text: str
    params: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    state: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def from_models(cls, models, config) -> "Checkpoint":
        params: OrderedDict[str, np.ndarray] = OrderedDict()
        for prefix, net in (("G", models.generator), ("D", models.discriminator)):
            for name, t in net.params.items():
                params[f"{prefix}/{name}"] = t.data.copy()
        state: OrderedDict[str, np.ndarray] = OrderedDict()
        for prefix, st in (("G", models.gen_state), ("D", models.disc_state)):
            state[f"{prefix}.adam/step"] = np.array(st.step_count, dtype="<u8")
            for name, m in st.first_moment.items():
                state[f"{prefix}.adam/m/{name}"] = m.copy()
            for name, v in st.second_moment.items():
                state[f"{prefix}.adam/v/{name}"] = v.copy()
        return cls(models.epoch, config.to_text(), params, state)

    def generator_params(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k[2:], v) for k, v in self.params.items() if k.startswith("G/"))

    def discriminator_params(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k[2:], v) for k, v in self.params.items() if k.startswith("D/"))


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in DTYPE_TAGS:
        raise CheckpointFormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<B", DTYPE_TAGS[dt])
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def record_size(name: str, arr: np.ndarray) -> int:
    return 2 + len(name.encode("utf-8")) + 1 + 4 * np.ndim(arr) + 1 + np.asarray(arr).nbytes


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, ckpt.epoch), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(ckpt.params))]
    parts += [_record(k, v) for k, v in ckpt.params.items()]
    parts.append(struct.pack("<I", len(ckpt.state)))
    parts += [_record(k, v) for k, v in ckpt.state.items()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                                        f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def record(self) -> tuple[str, np.ndarray]:
        (nlen,) = self.unpack("<H", "name length")
        name = self.take(nlen, "tensor name").decode("utf-8")
        (rank,) = self.unpack("<B", f"rank of {name!r}")
        shape = self.unpack(f"<{rank}I", f"extents of {name!r}")
        (tag,) = self.unpack("<B", f"dtype of {name!r}")
        if tag not in TAG_DTYPES:
            raise CheckpointFormatError(f"tensor {name!r}: unknown dtype tag {tag}")
        dt = TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * dt.itemsize, f"elements of {name!r}")
        return name, np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"not an OGCK checkpoint: magic {magic!r} (expected {MAGIC!r}, version {VERSION})")
    version, epoch = r.unpack("<IQ", "header")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (clen,) = r.unpack("<I", "config length")
    config_text = r.take(clen, "config text").decode("utf-8")
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    (count,) = r.unpack("<I", "parameter count")
    for _ in range(count):
        name, arr = r.record()
        params[name] = arr
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    (count,) = r.unpack("<I", "state count")
    for _ in range(count):
        name, arr = r.record()
        state[name] = arr
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(int(epoch), config_text, params, state)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    data = encode_checkpoint(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def _restore_state(ckpt: Checkpoint, prefix: str, params, config) -> AdamState:
    st = AdamState(**config.adam_hyper())
    st.step_count = int(ckpt.state[f"{prefix}.adam/step"])
    for name in params:
        st.first_moment[name] = ckpt.state[f"{prefix}.adam/m/{name}"].copy()
        st.second_moment[name] = ckpt.state[f"{prefix}.adam/v/{name}"].copy()
    return st


def models_from_checkpoint(ckpt: Checkpoint):
    """Rebuild networks and optimizer states; returns (Models, TrainingConfig)."""
    from .training import Models, TrainingConfig

    config = TrainingConfig.from_text(ckpt.config_text)
    gparams = ckpt.generator_params()
    dparams = ckpt.discriminator_params()
    _, g_ref = build_unet(config.generator, 0)
    _, d_ref = build_discriminator(config.discriminator, 0)
    for label, got, ref in (("generator", gparams, g_ref), ("discriminator", dparams, d_ref)):
        expected = [(k, v.shape) for k, v in ref.items()]
        if [(k, v.shape) for k, v in got.items()] != expected:
            raise CheckpointFormatError(f"{label} tensors do not match the architecture in the checkpoint config")
    try:
        gen = UNetGenerator(config.generator, OrderedDict(
            (k, Tensor(v, requires_grad=True, dtype=v.dtype, name=k)) for k, v in gparams.items()))
        disc = Discriminator(config.discriminator, OrderedDict(
            (k, Tensor(v, requires_grad=True, dtype=v.dtype, name=k)) for k, v in dparams.items()))
        models = Models(gen, disc, _restore_state(ckpt, "G", gparams, config),
                        _restore_state(ckpt, "D", dparams, config), ckpt.epoch)
    except KeyError as exc:
        raise CheckpointFormatError(f"checkpoint is missing tensor {exc}") from None
    return models, config


def load_generator(path: str | os.PathLike) -> UNetGenerator:
    models, _ = models_from_checkpoint(load_checkpoint(path))
    return models.generator
