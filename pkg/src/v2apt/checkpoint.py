"""Bit-exact checkpoint container.

Little-endian layout: magic "V2AP", version, the canonical config text with
its own CRC32, sorted named tensor records (name, dtype tag, rank, extents,
raw bytes), the freeze-mask name list, optimizer hyperparameters and moment
buffers, named RNG cursors, the step counter, and a CRC32 footer over every
preceding byte. Sorting all name-keyed sections makes save -> load -> save
reproduce the file byte for byte.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, RunConfig, config_from_text, config_to_text
from .errors import FormatError
from .model import PromptedClassifier
from .tensor import Tensor
from .trainer import AdamW

CKPT_MAGIC = b"V2AP"
CKPT_VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class OptimizerSnapshot:
    lr: float
    weight_decay: float
    beta1: float
    beta2: float
    eps: float
    t: int
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]
    frozen: frozenset[str] = frozenset()
    optimizer: OptimizerSnapshot | None = None
    rng_cursors: dict[str, int] = field(default_factory=dict)
    step: int = 0

    def configs(self) -> tuple[ModelConfig, RunConfig]:
        return config_from_text(self.config_text)


def _pack_name(out: bytearray, name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"name too long: {name[:32]}...")
    out += struct.pack("<H", len(raw))
    out += raw


def _pack_array(out: bytearray, arr: np.ndarray) -> None:
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt not in _DTYPE_TAGS:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    out += struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr, dtype=dt).tobytes()


def save_checkpoint(ck: Checkpoint, path) -> None:
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<I", CKPT_VERSION)
    text = ck.config_text.encode("utf-8")
    out += struct.pack("<I", len(text))
    out += text
    out += struct.pack("<I", zlib.crc32(text))

    out += struct.pack("<I", len(ck.tensors))
    for name in sorted(ck.tensors):
        _pack_name(out, name)
        _pack_array(out, ck.tensors[name])

    out += struct.pack("<I", len(ck.frozen))
    for name in sorted(ck.frozen):
        _pack_name(out, name)

    if ck.optimizer is None:
        out += struct.pack("<B", 0)
    else:
        o = ck.optimizer
        if sorted(o.m) != sorted(o.v):
            raise FormatError("optimizer moment name sets differ")
        out += struct.pack("<B", 1)
        out += struct.pack("<5d", o.lr, o.weight_decay, o.beta1, o.beta2, o.eps)
        out += struct.pack("<Q", o.t)
        out += struct.pack("<I", len(o.m))
        for name in sorted(o.m):
            _pack_name(out, name)
            _pack_array(out, o.m[name])
            _pack_array(out, o.v[name])

    out += struct.pack("<I", len(ck.rng_cursors))
    for name in sorted(ck.rng_cursors):
        _pack_name(out, name)
        out += struct.pack("<Q", ck.rng_cursors[name])

    out += struct.pack("<Q", ck.step)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.at = 0

    def take(self, n: int, what: str) -> bytes:
        if self.at + n > len(self.blob):
            raise FormatError(f"truncated file while reading {what}")
        chunk = self.blob[self.at:self.at + n]
        self.at += n
        return chunk

    def unpack(self, fmt: str, what: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
        return vals[0] if len(vals) == 1 else vals

    def name(self, what: str) -> str:
        n = self.unpack("<H", f"{what} name length")
        return self.take(n, f"{what} name").decode("utf-8")

    def array(self, what: str) -> np.ndarray:
        tag, rank = self.unpack("<BB", f"{what} dtype/rank")
        if tag not in _TAG_DTYPES:
            raise FormatError(f"unknown dtype tag {tag} in {what}")
        shape = struct.unpack(f"<{rank}I", self.take(4 * rank, f"{what} extents"))
        dt = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = self.take(count * dt.itemsize, f"{what} data")
        return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12:
        raise FormatError("truncated file: too short for header")
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {CKPT_MAGIC!r}")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported version {version}")
    footer = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != footer:
        raise FormatError("checksum mismatch in footer")

    r = _Reader(blob[:-4])
    r.at = 8
    text_len = r.unpack("<I", "config length")
    text = r.take(text_len, "config text").decode("utf-8")
    if r.unpack("<I", "config hash") != zlib.crc32(text.encode("utf-8")):
        raise FormatError("config hash mismatch")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.unpack("<I", "tensor count")):
        name = r.name("tensor")
        tensors[name] = r.array(f"tensor {name!r}")

    frozen = frozenset(r.name("freeze mask") for _ in range(r.unpack("<I", "freeze count")))

    optimizer = None
    if r.unpack("<B", "optimizer flag"):
        lr, wd, b1, b2, eps = r.unpack("<5d", "optimizer hyperparameters")
        t = r.unpack("<Q", "optimizer step")
        optimizer = OptimizerSnapshot(lr, wd, b1, b2, eps, t)
        for _ in range(r.unpack("<I", "moment count")):
            name = r.name("moment")
            optimizer.m[name] = r.array(f"first moment {name!r}")
            optimizer.v[name] = r.array(f"second moment {name!r}")

    cursors = {}
    for _ in range(r.unpack("<I", "cursor count")):
        name = r.name("rng cursor")
        cursors[name] = r.unpack("<Q", f"cursor {name!r}")

    step = r.unpack("<Q", "step")
    if r.at != len(r.blob):
        raise FormatError(f"{len(r.blob) - r.at} trailing byte(s) after step field")
    return Checkpoint(text, tensors, frozen, optimizer, cursors, int(step))


# ---------------------------------------------------------------------------
# model/trainer bridging


def snapshot(
    model: PromptedClassifier,
    run: RunConfig,
    optimizer: AdamW | None = None,
    step: int = 0,
) -> Checkpoint:
    opt = None
    if optimizer is not None:
        opt = OptimizerSnapshot(
            optimizer.lr, optimizer.weight_decay, optimizer.beta1, optimizer.beta2,
            optimizer.eps, optimizer.t, dict(optimizer.m), dict(optimizer.v),
        )
        # moments exist only for parameters touched by a step; fill the rest
        for name in optimizer.names:
            if name not in opt.m:
                opt.m[name] = np.zeros_like(model.params[name].data)
                opt.v[name] = np.zeros_like(model.params[name].data)
    cursors = {"eps": step}
    return Checkpoint(
        config_text=config_to_text(model.cfg, run),
        tensors={n: p.data.copy() for n, p in model.params.items()},
        frozen=model.frozen,
        optimizer=opt,
        rng_cursors=cursors,
        step=step,
    )


def restore_model(ck: Checkpoint) -> tuple[PromptedClassifier, RunConfig]:
    cfg, run = ck.configs()
    params = {
        name: Tensor(arr, requires_grad=name not in ck.frozen)
        for name, arr in ck.tensors.items()
    }
    return PromptedClassifier(cfg, params, ck.frozen), run


def restore_optimizer(ck: Checkpoint) -> AdamW | None:
    if ck.optimizer is None:
        return None
    o = ck.optimizer
    opt = AdamW(sorted(o.m), o.lr, o.weight_decay, o.beta1, o.beta2, o.eps)
    opt.t = o.t
    opt.m = {k: v.copy() for k, v in o.m.items()}
    opt.v = {k: v.copy() for k, v in o.v.items()}
    return opt
