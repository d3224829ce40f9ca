"""Binary checkpoint format: magic "PDCN", version, JSON metadata block,
then a named tensor table (little-endian raw values).

Writing is fully deterministic: metadata is canonical JSON and tensors are
emitted in a fixed order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

MAGIC = b"PDCN"
VERSION = 1
_DTYPE_TAGS = {"<f4": 0, "<f8": 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class CheckpointData:
    meta: dict
    tensors: dict[str, np.ndarray]


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    key = arr.dtype.newbyteorder("<").str.lstrip("|")
    if key not in _DTYPE_TAGS:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name}")
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb
    head += struct.pack("<BB", _DTYPE_TAGS[key], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(arr.dtype.newbyteorder("<")).tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, section: str) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint in {section}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, section: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), section))


def write_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]):
    meta_bytes = json.dumps(meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name in tensors:  # insertion order is the canonical order
            f.write(_pack_tensor(name, tensors[name]))


def read_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not a PDCN checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I", "metadata")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"malformed metadata block: {e}") from e
    (count,) = r.unpack("<I", "tensor table")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor table")
        name = r.take(nlen, "tensor table").decode("utf-8")
        tag, ndim = r.unpack("<BB", f"tensor {name}")
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for tensor {name}")
        shape = r.unpack(f"<{ndim}I", f"tensor {name}")
        dtype = _TAG_DTYPES[tag]
        n = int(np.prod(shape)) if ndim else 1
        raw = r.take(n * dtype.itemsize, f"tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if r.off != len(buf):
        raise CheckpointError("trailing bytes after tensor table")
    return CheckpointData(meta=meta, tensors=tensors)


def history_digest(records) -> str:
    """Digest over the reproducible history fields (wall time excluded)."""
    canon = [[r.epoch, r.phase, round(r.train_loss, 9), round(r.train_acc, 9),
              round(r.val_loss, 9), round(r.val_acc, 9)] for r in records]
    blob = json.dumps(canon, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def model_tensors(model, optimizer=None) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for name, layer, pname in model.named_params():
        tensors[f"param:{name}"] = layer.params[pname]
    for name, layer, sname in model.named_state():
        tensors[f"state:{name}"] = layer.state[sname]
    if optimizer is not None:
        for pname in sorted(optimizer.slots):
            for sname in optimizer.slot_names:
                tensors[f"slot:{pname}:{sname}"] = optimizer.slots[pname][sname]
    return tensors


def save_model(path, model, config, optimizer=None, history=None,
               extra_meta=None):
    from dataclasses import asdict
    meta = {
        "config": asdict(config),
        "class_order": list(model.class_names),
        "trainable_nodes": [n.name for n in model.nodes if n.layer.trainable],
        "epoch": history.records[-1].epoch if history and history.records else 0,
        "history_digest": history_digest(history.records) if history else None,
    }
    if optimizer is not None:
        meta["optimizer"] = {"kind": optimizer.kind, "lr": optimizer.lr,
                             "t": optimizer.t}
    if extra_meta:
        meta.update(extra_meta)
    write_checkpoint(path, meta, model_tensors(model, optimizer))


def restore_model(path, seed: int = 0):
    """Rebuild (model, config, optimizer-or-None, meta) from a checkpoint."""
    from .models import ModelConfig, build_model
    from .optim import make_optimizer

    data = read_checkpoint(path)
    cfg_dict = dict(data.meta.get("config", {}))
    cfg_dict.pop("pretrained", None)
    config = ModelConfig(pretrained=None, **cfg_dict)
    model = build_model(config, seed=seed)
    assign_tensors(model, data.tensors)
    trainable = set(data.meta.get("trainable_nodes", []))
    for node in model.nodes:
        node.layer.trainable = node.name in trainable
    opt = None
    if "optimizer" in data.meta:
        opt = make_optimizer(config, lr=data.meta["optimizer"]["lr"])
        opt.t = data.meta["optimizer"]["t"]
        for key, arr in data.tensors.items():
            if key.startswith("slot:"):
                _, pname, sname = key.split(":", 2)
                opt.slots.setdefault(pname, {})[sname] = arr.copy()
    return model, config, opt, data.meta


def assign_tensors(model, tensors: dict[str, np.ndarray]):
    for name, layer, pname in model.named_params():
        key = f"param:{name}"
        if key in tensors:
            _check_shape(key, tensors[key], layer.params[pname])
            layer.params[pname] = tensors[key].astype(layer.params[pname].dtype)
    for name, layer, sname in model.named_state():
        key = f"state:{name}"
        if key in tensors:
            _check_shape(key, tensors[key], layer.state[sname])
            layer.state[sname] = tensors[key].astype(layer.state[sname].dtype)
    model.zero_grads()


def _check_shape(key, src, dst):
    if tuple(src.shape) != tuple(dst.shape):
        raise CheckpointError(
            f"shape mismatch for {key}: checkpoint {tuple(src.shape)} "
            f"vs model {tuple(dst.shape)}")


def load_backbone_weights(model, path):
    """Fill every backbone parameter/statistic from a checkpoint file."""
    data = read_checkpoint(path)
    backbone = set(n.name for n in model.nodes[:model.backbone_len])
    for name, layer, pname in model.named_params():
        if name.split(".")[0] not in backbone:
            continue
        key = f"param:{name}"
        if key not in data.tensors:
            raise CheckpointError(f"missing backbone tensor {key}")
        _check_shape(key, data.tensors[key], layer.params[pname])
        layer.params[pname] = data.tensors[key].astype(layer.params[pname].dtype)
    for name, layer, sname in model.named_state():
        if name.split(".")[0] not in backbone:
            continue
        key = f"state:{name}"
        if key not in data.tensors:
            raise CheckpointError(f"missing backbone tensor {key}")
        _check_shape(key, data.tensors[key], layer.state[sname])
        layer.state[sname] = data.tensors[key].astype(layer.state[sname].dtype)
