"""Binary checkpoint format: config snapshot plus named float32 tensors.

Layout (all integers little-endian):

    8s   magic "MMCTRCP\\0"
    u32  format version
    u32  config text length, then UTF-8 config key = value text
    u32  meta JSON length, then UTF-8 JSON object
    u32  tensor count, then per tensor:
         u16 name length, name UTF-8, u8 rank, u32 per dim,
         raw float32 little-endian payload
    u8   optimizer-state flag; when 1: u64 step count, then a tensor list
         (same encoding) holding first and second moments

Round trips are bit-identical; loads reject bad magic, version skew,
truncation, and shape mismatches by name.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .config import TrainConfig, format_config, parse_config_text

MAGIC = b"MMCTRCP\x00"
VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable or does not match the model."""


def _write_tensor(f, name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def _read_tensor(f):
    (name_len,) = struct.unpack("<H", _read_exact(f, 2, "tensor name length"))
    name = _read_exact(f, name_len, "tensor name").decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(f, 1, f"rank of {name}"))
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"dims of {name}"))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(f, 4 * count, f"payload of {name}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return name, arr


def save_checkpoint(path, config: TrainConfig, tensors, meta=None,
                    optimizer_state=None):
    """Write config, meta, and (name, array) tensors; arrays are stored as
    float32 regardless of platform endianness."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_text = format_config(config).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_text)))
    buf.write(cfg_text)
    meta_text = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_text)))
    buf.write(meta_text)
    tensors = list(tensors)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    if optimizer_state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", optimizer_state["t"]))
        moments = [*[("m:" + n, a) for n, a in optimizer_state["m"].items()],
                   *[("v:" + n, a) for n, a in optimizer_state["v"].items()]]
        buf.write(struct.pack("<I", len(moments)))
        for name, arr in moments:
            _write_tensor(buf, name, arr)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class Checkpoint:
    def __init__(self, config, tensors, meta, optimizer_state):
        self.config = config
        self.tensors = tensors
        self.meta = meta
        self.optimizer_state = optimizer_state


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}, "
                                  f"expected {VERSION}")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config = parse_config_text(
            _read_exact(f, cfg_len, "config").decode("utf-8"), source=str(path))
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "meta length"))
        meta = json.loads(_read_exact(f, meta_len, "meta").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            name, arr = _read_tensor(f)
            if name in tensors:
                raise CheckpointError(f"duplicate tensor '{name}'")
            tensors[name] = arr
        (has_opt,) = struct.unpack("<B", _read_exact(f, 1, "optimizer flag"))
        optimizer_state = None
        if has_opt:
            (t,) = struct.unpack("<Q", _read_exact(f, 8, "optimizer step"))
            (n,) = struct.unpack("<I", _read_exact(f, 4, "optimizer tensor count"))
            optimizer_state = {"t": t, "m": {}, "v": {}}
            for _ in range(n):
                name, arr = _read_tensor(f)
                kind, _, pname = name.partition(":")
                optimizer_state[kind][pname] = arr
        trailing = f.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(config, tensors, meta, optimizer_state)


def apply_state(model, tensors):
    """Copy checkpoint tensor values into a model, by name.

    Raises CheckpointError naming the first tensor whose shape differs,
    plus any missing or unexpected names.
    """
    expected = model.state_tensors()
    expected_names = [name for name, _ in expected]
    missing = [n for n in expected_names if n not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {missing}")
    extra = [n for n in tensors if n not in set(expected_names)]
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors: {extra}")
    for name, current in expected:
        stored = tensors[name]
        if stored.shape != current.shape:
            raise CheckpointError(
                f"tensor '{name}': checkpoint shape {stored.shape} does not "
                f"match model shape {current.shape}")
    by_name = dict(model.named_params())
    for name, arr in tensors.items():
        if name in by_name:
            by_name[name].data = arr.astype(by_name[name].data.dtype)
        elif not np.array_equal(arr, dict(expected)[name]):
            # frozen catalog arrays are never overwritten; reject mismatches
            raise CheckpointError(f"frozen tensor '{name}' differs from the "
                                  f"model's item catalog")


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild a scoring-ready model from a loaded checkpoint."""
    from .model import CtrModel

    cfg = ckpt.config
    try:
        mm = ckpt.tensors[CtrModel.FROZEN_MM]
        cat_codes = ckpt.tensors[CtrModel.FROZEN_CAT].astype(np.int64)
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing item catalog tensor {e}")
    side_vocab = []
    for j in range(cfg.n_side_features):
        name = f"embed.side{j}"
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor '{name}'")
        side_vocab.append(ckpt.tensors[name].shape[0])
    model = CtrModel(cfg, cat_codes, mm, side_vocab)
    apply_state(model, ckpt.tensors)
    return model
