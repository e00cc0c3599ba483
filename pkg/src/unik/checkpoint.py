"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"UNIK" | u32 version | u32 fingerprint | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u8 rank | u32 extent * rank | f32 values

The architecture and training metadata travel as two reserved tensors,
``meta.config`` and ``meta.train``, so a checkpoint is self-describing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from unik.net import CLASSIFIER_PREFIX, NetworkConfig, UnikNet, build_network

MAGIC = b"UNIK"
VERSION = 1
META_CONFIG = "meta.config"
META_TRAIN = "meta.train"


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


def _encode_config(cfg: NetworkConfig) -> np.ndarray:
    head = [cfg.V, cfg.C_in, cfg.num_classes, cfg.t, cfg.N, cfg.tau, cfg.persons, cfg.K]
    return np.array(head + list(cfg.channels) + list(cfg.dilations) + list(cfg.strides), dtype=np.float32)


def _decode_config(vec: np.ndarray) -> NetworkConfig:
    v = [int(round(float(x))) for x in vec]
    if len(v) < 8:
        raise CorruptCheckpointError("meta.config is truncated")
    k = v[7]
    if len(v) != 8 + 3 * k:
        raise CorruptCheckpointError("meta.config length does not match its block count")
    return NetworkConfig(
        V=v[0], C_in=v[1], num_classes=v[2], t=v[3], N=v[4], tau=v[5], persons=v[6],
        channels=tuple(v[8 : 8 + k]), dilations=tuple(v[8 + k : 8 + 2 * k]), strides=tuple(v[8 + 2 * k :]),
    )


def _encode_train(epoch: int, seed: int) -> np.ndarray:
    seed = int(seed) & 0xFFFFFFFF
    return np.array([epoch, seed >> 16, seed & 0xFFFF], dtype=np.float32)


@dataclass
class Checkpoint:
    config: NetworkConfig
    tensors: Dict[str, np.ndarray]
    epoch: int = 0
    seed: int = 0
    fingerprint: int = field(default=0)

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = self.config.fingerprint()


def save_checkpoint(net: UnikNet, path: Union[str, Path], epoch: int = 0, seed: int = 0) -> None:
    write_checkpoint(Checkpoint(net.cfg, dict(net.state()), epoch, seed), path)


def write_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    named: List[Tuple[str, np.ndarray]] = [
        (META_CONFIG, _encode_config(ckpt.config)),
        (META_TRAIN, _encode_train(ckpt.epoch, ckpt.seed)),
    ]
    named += [(n, a) for n, a in ckpt.tensors.items()]
    parts = [MAGIC, struct.pack("<III", VERSION, ckpt.fingerprint, len(named))]
    for name, arr in named:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_header(buf: bytes) -> Tuple[int, int, int]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a UNIK checkpoint (bad magic bytes)")
    version, fingerprint, count = r.unpack("<III")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    return version, fingerprint, count


def load_checkpoint(path: Union[str, Path], expected: Optional[NetworkConfig] = None) -> Checkpoint:
    """Read a checkpoint; with ``expected`` the fingerprint is checked before any tensor is read."""
    with open(path, "rb") as fh:
        buf = fh.read()
    _, fingerprint, count = read_header(buf)
    if expected is not None and expected.fingerprint() != fingerprint:
        raise ArchitectureMismatchError(
            f"checkpoint fingerprint {fingerprint:#010x} does not match the configured architecture "
            f"{expected.fingerprint():#010x}"
        )
    r = _Reader(buf)
    r.pos = 16
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptCheckpointError("tensor name is not valid UTF-8") from None
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(buf):
        raise CorruptCheckpointError("trailing bytes after the last tensor")
    if META_CONFIG not in tensors:
        raise CorruptCheckpointError("checkpoint has no meta.config entry")
    cfg = _decode_config(tensors.pop(META_CONFIG))
    if cfg.fingerprint() != fingerprint:
        raise CorruptCheckpointError("stored configuration does not hash to the header fingerprint")
    meta = tensors.pop(META_TRAIN, np.zeros(3, dtype=np.float32))
    seed = (int(meta[1]) << 16) | int(meta[2])
    return Checkpoint(cfg, tensors, epoch=int(meta[0]), seed=seed, fingerprint=fingerprint)


def network_from_checkpoint(ckpt: Checkpoint) -> UnikNet:
    net = build_network(ckpt.config, seed=ckpt.seed)
    expected = set(net.state())
    missing = expected - set(ckpt.tensors)
    if missing:
        raise CorruptCheckpointError(f"checkpoint lacks tensors {sorted(missing)[:3]}")
    net.load_state(ckpt.tensors, sorted(expected))
    return net


@dataclass
class PartialLoad:
    net: UnikNet
    restored: List[str]
    fresh: List[str]


def load_pretrained_partial(
    path: Union[str, Path],
    cfg: NetworkConfig,
    policy: str = "backbone_only",
    seed: int = 0,
) -> PartialLoad:
    """Build a network for ``cfg`` and restore pretrained tensors into it.

    ``full`` restores everything (the classifier must match); ``backbone_only``
    restores everything but the classifier, which keeps its fresh initialisation.
    Under ``full`` a differing class count falls back to a fresh classifier.
    """
    if policy not in ("backbone_only", "full"):
        raise ValueError(f"policy must be 'backbone_only' or 'full', got {policy!r}")
    ckpt = load_checkpoint(path)
    net = build_network(cfg, seed=seed)
    targets = net.state()
    restored, fresh, mismatched = [], [], []
    for name, dst in targets.items():
        is_head = name.startswith(CLASSIFIER_PREFIX)
        src = ckpt.tensors.get(name)
        if is_head and (policy == "backbone_only" or src is None or src.shape != dst.shape):
            fresh.append(name)
            continue
        if src is None:
            raise ArchitectureMismatchError(f"checkpoint has no tensor {name!r}")
        if src.shape != dst.shape:
            mismatched.append((name, src.shape, dst.shape))
        restored.append(name)
    if mismatched:
        # a dependency matrix is the most telling symptom of a joint-count change
        name, got, want = min(mismatched, key=lambda m: not m[0].endswith(".W"))
        raise ArchitectureMismatchError(
            f"tensor {name!r}: checkpoint shape {got} does not fit the configured {want}"
        )
    net.load_state(ckpt.tensors, restored)
    return PartialLoad(net, restored, fresh)
