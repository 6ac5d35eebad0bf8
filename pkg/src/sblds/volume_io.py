"""Bit-exact containers for volumes, masks, latents and dataset manifests.

Binary layout shared by every grid file::

    magic (4 bytes) | header length (uint32 LE) | UTF-8 JSON header | payload

The payload is little-endian and z-major: for a grid with dims ``(W, H, D)``
the in-memory array has shape ``(D, H, W)`` so that ``array[i]`` is slice
``i`` as a contiguous view.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, PersistenceError, ValidationError

VOLUME_MAGIC = b"SBLV"
MASK_MAGIC = b"SBLM"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


@dataclass
class VolumeGrid:
    """Scalar image grid. ``data`` has shape ``(D, H, W)``."""

    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValidationError(f"volume must be 3-D, got shape {self.data.shape}")
        self.value_range = (float(self.value_range[0]), float(self.value_range[1]))

    @property
    def dims(self) -> tuple[int, int, int]:
        d, h, w = self.data.shape
        return (w, h, d)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("volume contains non-finite voxels")
        lo, hi = self.value_range
        if not lo <= hi:
            raise ValidationError(f"invalid value_range {self.value_range}")

    def slice(self, i: int) -> np.ndarray:
        return self.data[i]

    def __eq__(self, other):
        if not isinstance(other, VolumeGrid):
            return NotImplemented
        return (
            self.value_range == other.value_range
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass
class MaskGrid:
    """Binary mask grid. ``data`` has shape ``(D, H, W)`` and dtype uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        self.data = np.ascontiguousarray(arr)
        if self.data.ndim != 3:
            raise ValidationError(f"mask must be 3-D, got shape {self.data.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        d, h, w = self.data.shape
        return (w, h, d)

    def validate(self) -> None:
        if self.data.dtype != np.uint8:
            values = np.unique(self.data)
            if not np.all(np.isin(values, (0, 1))):
                raise ValidationError(f"mask voxels outside {{0,1}}: {values[:5]}")
            self.data = self.data.astype(np.uint8)
        elif self.data.size and self.data.max() > 1:
            raise ValidationError(f"mask voxel value {int(self.data.max())} not in {{0,1}}")

    def __eq__(self, other):
        if not isinstance(other, MaskGrid):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


# --------------------------------------------------------------------------
# low-level container


def _encode(magic: bytes, header: dict, payload: bytes) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<I", len(head)) + head + payload


def _write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise PersistenceError(f"cannot write file ({exc.strerror})", path) from exc


def _read_container(path, magic: bytes) -> tuple[dict, bytes]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read file ({exc.strerror})", path) from exc
    if len(blob) < 8 or blob[:4] != magic:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + n:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    return header, blob[8 + n :]


def _payload_array(path, header: dict, payload: bytes, dtype_key: str, channels: int = 1):
    if header.get("dtype") != dtype_key or header.get("order") != "z-major":
        raise FormatError(f"{path}: unsupported dtype/order {header.get('dtype')}/{header.get('order')}")
    try:
        w, h, d = (int(v) for v in header["dims"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header lacks valid dims") from exc
    if min(w, h, d) < 1:
        raise FormatError(f"{path}: non-positive dims {(w, h, d)}")
    dtype = _DTYPES[dtype_key]
    expected = channels * w * h * d * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    shape = (d, h, w) if channels == 1 else (channels, d, h, w)
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


# --------------------------------------------------------------------------
# volumes and masks


def write_volume(grid: VolumeGrid, path, role: str | None = None) -> None:
    grid.validate()
    header = {
        "version": FORMAT_VERSION,
        "dims": list(grid.dims),
        "dtype": "f32",
        "order": "z-major",
        "value_range": list(grid.value_range),
    }
    if role is not None:
        header["role"] = role
    _write_bytes(path, _encode(VOLUME_MAGIC, header, grid.data.astype("<f4").tobytes()))


def read_volume(path) -> VolumeGrid:
    header, payload = _read_container(path, VOLUME_MAGIC)
    if int(header.get("channels", 1)) != 1:
        raise FormatError(f"{path}: multi-channel file, use read_latent")
    data = _payload_array(path, header, payload, "f32")
    grid = VolumeGrid(data, tuple(header.get("value_range", (0.0, 1.0))))
    grid.validate()
    return grid


def write_mask(mask: MaskGrid, path) -> None:
    mask.validate()
    header = {"version": FORMAT_VERSION, "dims": list(mask.dims), "dtype": "u8", "order": "z-major"}
    _write_bytes(path, _encode(MASK_MAGIC, header, mask.data.tobytes()))


def read_mask(path) -> MaskGrid:
    header, payload = _read_container(path, MASK_MAGIC)
    mask = MaskGrid(_payload_array(path, header, payload, "u8"))
    mask.validate()
    return mask


def write_latent(code: np.ndarray, path) -> None:
    """Store a ``(C, D, H', W')`` latent volume as a multi-channel SBLV file."""
    code = np.ascontiguousarray(code, dtype="<f4")
    if code.ndim != 4:
        raise ValidationError(f"latent must be 4-D (C, D, H, W), got {code.shape}")
    if not np.all(np.isfinite(code)):
        raise ValidationError("latent contains non-finite values")
    c, d, h, w = code.shape
    header = {
        "version": FORMAT_VERSION,
        "dims": [w, h, d],
        "channels": c,
        "dtype": "f32",
        "order": "z-major",
        "role": "latent",
    }
    _write_bytes(path, _encode(VOLUME_MAGIC, header, code.tobytes()))


def read_latent(path) -> np.ndarray:
    header, payload = _read_container(path, VOLUME_MAGIC)
    if header.get("role") != "latent":
        raise FormatError(f"{path}: not a latent file")
    channels = int(header.get("channels", 1))
    data = _payload_array(path, header, payload, "f32", channels=channels)
    if data.ndim == 3:
        data = data[None]
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: latent contains non-finite values")
    return data


# --------------------------------------------------------------------------
# manifests


@dataclass
class CaseRecord:
    case_id: str
    image_path: str
    mask_path: str
    condition: "ConditionVector"
    split: str

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "condition": self.condition.to_json(),
            "split": self.split,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CaseRecord":
        from .features import ConditionVector

        return cls(
            case_id=str(obj["case_id"]),
            image_path=str(obj["image_path"]),
            mask_path=str(obj["mask_path"]),
            condition=ConditionVector.from_json(obj["condition"]),
            split=str(obj["split"]),
        )


@dataclass
class DatasetManifest:
    dims: tuple[int, int, int]
    cases: list[CaseRecord] = field(default_factory=list)
    format_version: int = MANIFEST_VERSION
    provenance: dict | None = None
    root: Path | None = field(default=None, compare=False, repr=False)

    def split(self, name: str) -> list[CaseRecord]:
        return [c for c in self.cases if c.split == name]

    def case(self, case_id: str) -> CaseRecord:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)

    def resolve(self, relpath: str) -> Path:
        return (self.root or Path(".")) / relpath

    def load_case(self, record: CaseRecord) -> tuple[VolumeGrid, MaskGrid]:
        return read_volume(self.resolve(record.image_path)), read_mask(self.resolve(record.mask_path))

    def validate(self, check_files: bool = False) -> None:
        """Check structural invariants; with ``check_files`` also parse every referenced file.

        Never mutates the manifest.
        """
        dims = tuple(int(v) for v in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValidationError(f"manifest dims must be three positive ints, got {self.dims}")
        seen = set()
        for rec in self.cases:
            if rec.case_id in seen:
                raise ValidationError(f"duplicate case_id {rec.case_id!r}")
            seen.add(rec.case_id)
            if rec.split not in SPLITS:
                raise ValidationError(f"case {rec.case_id!r}: unknown split {rec.split!r}")
        if not check_files:
            return
        for rec in self.cases:
            for rel in (rec.image_path, rec.mask_path):
                if not self.resolve(rel).is_file():
                    raise ValidationError(f"case {rec.case_id!r}: missing file {rel}")
            img, msk = self.load_case(rec)
            if img.dims != dims or msk.dims != dims:
                raise ValidationError(f"case {rec.case_id!r}: dims {img.dims}/{msk.dims} != manifest {dims}")

    def to_json(self) -> dict:
        out = {
            "format_version": self.format_version,
            "dims": list(self.dims),
            "cases": [c.to_json() for c in self.cases],
        }
        if self.provenance is not None:
            out["provenance"] = self.provenance
        return out


def dumps_json(obj) -> str:
    """Canonical JSON text used for every artifact this package writes."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(obj, path) -> None:
    _write_bytes(path, dumps_json(obj).encode("utf-8"))


def read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot read file ({exc.strerror})", path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    write_json(manifest.to_json(), path)


def read_manifest(path, check_files: bool = False) -> DatasetManifest:
    obj = read_json(path)
    try:
        manifest = DatasetManifest(
            dims=tuple(int(v) for v in obj["dims"]),
            cases=[CaseRecord.from_json(c) for c in obj["cases"]],
            format_version=int(obj["format_version"]),
            provenance=obj.get("provenance"),
            root=Path(path).parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc!r})") from exc
    if manifest.format_version != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest.format_version}")
    manifest.validate(check_files=check_files)
    return manifest
