"""Versioned, byte-deterministic checkpoint container.

Layout: ``b"SBLC"`` | uint32 LE header length | JSON header | tensor payload.
The header embeds the architecture config, the code version, optional training
state (step counter, optimizer hyper-parameters) and a table of contents giving
name/dtype/shape/offset for each stored tensor. Tensors are written in
insertion order, so equal inputs always produce identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .errors import FormatError, PersistenceError
from .volume_io import _write_bytes

MAGIC = b"SBLC"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}


def save_checkpoint(path, kind: str, config: dict, tensors: dict, meta: dict | None = None) -> None:
    toc = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        t = value.detach().cpu() if torch.is_tensor(value) else torch.as_tensor(value)
        if t.dtype not in _DTYPES:
            t = t.to(torch.float32)
        arr = np.ascontiguousarray(t.numpy().astype(_DTYPES[t.dtype]))
        raw = arr.tobytes()
        toc.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "code_version": __version__,
        "config": config,
        "meta": meta or {},
        "tensors": toc,
        "payload_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    _write_bytes(path, MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks))


def load_checkpoint(path, kind: str | None = None) -> tuple[dict, dict]:
    """Return ``(header, tensors)``; tensors are fresh (writable) torch tensors."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read checkpoint ({exc.strerror})", path) from exc
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {blob[:4]!r})")
    (n,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} checkpoint, found {header.get('kind')!r}")
    payload = blob[8 + n :]
    if len(payload) != header["payload_bytes"]:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {header['payload_bytes']}")
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=entry["offset"])
        tensors[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).astype(dtype.newbyteorder("=")))
    return header, tensors


def optimizer_tensors(optimizer: torch.optim.Optimizer, model: torch.nn.Module) -> tuple[dict, dict]:
    """Flatten Adam state into named tensors keyed by parameter name."""
    names = {id(p): n for n, p in model.named_parameters()}
    tensors = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            for key, value in state.items():
                tensors[f"optim/{names[id(p)]}/{key}"] = torch.as_tensor(value)
    groups = [{k: v for k, v in g.items() if k != "params"} for g in optimizer.param_groups]
    for g in groups:
        for k, v in list(g.items()):
            if isinstance(v, tuple):
                g[k] = list(v)
    return tensors, {"param_groups": groups}


def restore_optimizer(optimizer: torch.optim.Optimizer, model: torch.nn.Module, tensors: dict) -> None:
    params = dict(model.named_parameters())
    for full, value in tensors.items():
        if not full.startswith("optim/"):
            continue
        pname, key = full[len("optim/") :].rsplit("/", 1)
        p = params[pname]
        state = optimizer.state[p]
        state[key] = value.clone().to(p.dtype if key != "step" else torch.float32)
