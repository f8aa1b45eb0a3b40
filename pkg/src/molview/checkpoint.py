"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic b"GMVP" | u32 version | sections... | u32 CRC-32 of everything before

Each section is ``4-byte tag | u64 payload length | payload``. Tensor tables
store ``u32 count`` followed by, per entry, ``u16 name length | name |
u8 ndim | u64 dims... | float64 data``.
"""

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from molview.errors import CheckpointError
from molview.optim import AdamState

MAGIC = b"GMVP"
FORMAT_VERSION = 1
EXTENSION = ".gmvp"

SECTION_TAGS = (b"CONF", b"PARM", b"ADMM", b"ADMV", b"ADAM", b"RNGS", b"STEP")


@dataclass(eq=False)
class Checkpoint:
    """Everything needed to resume a pretraining run bit-exactly."""
    config: dict
    params: dict[str, np.ndarray]
    adam: AdamState
    rng_state: dict
    step: int = 0
    version: int = FORMAT_VERSION

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.version == other.version
            and self.step == other.step
            and self.config == other.config
            and self.rng_state == other.rng_state
            and self.adam == other.adam
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )

    __hash__ = None


def _json_bytes(obj: object) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _encode_table(table: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(table))]
    for name in sorted(table):
        array = np.asarray(table[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated {self.what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def done(self) -> bool:
        return self.pos == len(self.data)


def _decode_table(payload: bytes, what: str) -> dict[str, np.ndarray]:
    reader = _Reader(payload, what)
    (count,) = reader.unpack("<I")
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        array = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape)
        table[name] = array.astype(np.float64)
    if not reader.done():
        raise CheckpointError(f"trailing bytes in {what}")
    return table


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    sections = {
        b"CONF": _json_bytes(ckpt.config),
        b"PARM": _encode_table(ckpt.params),
        b"ADMM": _encode_table(ckpt.adam.m),
        b"ADMV": _encode_table(ckpt.adam.v),
        b"ADAM": _json_bytes(ckpt.adam.hyper()),
        b"RNGS": _json_bytes(ckpt.rng_state),
        b"STEP": struct.pack("<Q", ckpt.step),
    }
    body = [MAGIC, struct.pack("<I", ckpt.version)]
    for tag in SECTION_TAGS:
        payload = sections[tag]
        body.append(tag + struct.pack("<Q", len(payload)) + payload)
    data = b"".join(body)
    return data + struct.pack("<I", zlib.crc32(data))


def decode_checkpoint(data: bytes) -> Checkpoint:
    """Parse checkpoint bytes; the CRC is verified before any section is decoded.

    Raises:
        CheckpointError: bad magic, truncation, checksum mismatch, version mismatch
    """
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("truncated checkpoint")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a molview checkpoint (bad magic)")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupted or truncated file)")

    reader = _Reader(data[:-4], "checkpoint")
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")

    sections: dict[bytes, bytes] = {}
    while not reader.done():
        tag = reader.take(4)
        (length,) = reader.unpack("<Q")
        sections[tag] = reader.take(length)
    missing = [t.decode() for t in SECTION_TAGS if t not in sections]
    if missing:
        raise CheckpointError(f"checkpoint is missing section(s): {', '.join(missing)}")

    try:
        config = json.loads(sections[b"CONF"])
        hyper = json.loads(sections[b"ADAM"])
        rng_state = json.loads(sections[b"RNGS"])
        adam = AdamState(**{k: hyper[k] for k in ("lr", "beta1", "beta2", "eps", "t")})
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as e:
        raise CheckpointError(f"malformed checkpoint metadata: {e}") from e
    adam.m = _decode_table(sections[b"ADMM"], "adam first moments")
    adam.v = _decode_table(sections[b"ADMV"], "adam second moments")
    (step,) = struct.unpack("<Q", sections[b"STEP"])
    return Checkpoint(
        config=config,
        params=_decode_table(sections[b"PARM"], "parameters"),
        adam=adam,
        rng_state=rng_state,
        step=step,
        version=version,
    )


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.write_bytes(encode_checkpoint(ckpt))
    logger.debug("saved checkpoint at step {} to {}", ckpt.step, path)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data)
