"""Volume representation, MVOL file I/O, HU truncation/normalization, resampling.

A Volume is a 3D scalar grid in z->y->x row-major order (z = axial slice
index) with voxel spacing metadata. Three dtypes are supported:

- int16:   Hounsfield units (raw CT and all HU-space intermediates)
- float32: normalized unit intensities, every voxel in [0, 1]
- uint8:   label masks, every voxel in {0, 1, 2} (0 background,
           1 right lung, 2 left lung)

Volumes are immutable after construction and safe to share across threads.

The on-disk MVOL format is one UTF-8 JSON header line
``{"magic":"MVOL1","dims":[Z,Y,X],"spacing_mm":[sz,sy,sx],"dtype":...}``
terminated by ``\\n``, followed by the raw little-endian voxel payload.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    HeaderFormatError,
    InvalidArgumentError,
    PayloadSizeError,
    UnknownDtypeError,
)

DEFAULT_HU_LO = -800
DEFAULT_HU_HI = 0

# dtype code <-> little-endian numpy dtype for the MVOL payload
DTYPE_CODES = {
    "i16": np.dtype("<i2"),
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
}
_KIND_TO_CODE = {np.dtype(np.int16): "i16", np.dtype(np.float32): "f32", np.dtype(np.uint8): "u8"}

VALID_LABELS = (0, 1, 2)


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar grid with spacing metadata.

    voxels: 3D array, shape (Z, Y, X), dtype int16 | float32 | uint8.
    spacing_mm: per-axis voxel size (sz, sy, sx), all positive.
    """

    voxels: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vox = np.ascontiguousarray(self.voxels)
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise InvalidArgumentError(f"volume must be 3D with all dims >= 1, got shape {vox.shape}")
        if vox.dtype not in _KIND_TO_CODE:
            raise UnknownDtypeError(f"unsupported volume dtype {vox.dtype}")
        if vox.dtype == np.float32:
            lo, hi = float(vox.min()), float(vox.max())
            if lo < 0.0 or hi > 1.0:
                raise InvalidArgumentError(f"float32 volume values must lie in [0,1], got [{lo}, {hi}]")
        elif vox.dtype == np.uint8:
            if int(vox.max(initial=0)) > max(VALID_LABELS):
                raise InvalidArgumentError("uint8 label volume may only contain {0,1,2}")
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise InvalidArgumentError(f"spacing_mm must be 3 positive reals, got {self.spacing_mm}")
        if vox is self.voxels and vox.flags.writeable:
            vox = vox.copy()
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def dtype_code(self) -> str:
        return _KIND_TO_CODE[self.voxels.dtype]


def volumes_equal(a: Volume, b: Volume) -> bool:
    """Bitwise equality of dims, spacing, dtype, and voxel payload."""
    return (
        a.dims == b.dims
        and a.spacing_mm == b.spacing_mm
        and a.voxels.dtype == b.voxels.dtype
        and bool(np.array_equal(a.voxels, b.voxels))
    )


# ---------------------------------------------------------------------------
# MVOL file I/O


def save_volume(vol: Volume, path) -> None:
    header = {
        "magic": "MVOL1",
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing_mm),
        "dtype": vol.dtype_code,
    }
    payload = np.ascontiguousarray(vol.voxels, dtype=DTYPE_CODES[vol.dtype_code])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload.tobytes())


def load_volume(path) -> Volume:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise HeaderFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderFormatError(f"{path}: malformed header ({exc})") from exc
    if not isinstance(header, dict) or header.get("magic") != "MVOL1":
        raise HeaderFormatError(f"{path}: bad magic, expected MVOL1")
    try:
        dims = [int(d) for d in header["dims"]]
        spacing = [float(s) for s in header["spacing_mm"]]
        code = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderFormatError(f"{path}: incomplete header ({exc})") from exc
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise HeaderFormatError(f"{path}: dims must be 3 positive ints, got {dims}")
    if code not in DTYPE_CODES:
        raise UnknownDtypeError(f"{path}: unknown dtype code {code!r}")
    dtype = DTYPE_CODES[code]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    payload = raw[newline + 1 :]
    if len(payload) != expected:
        raise PayloadSizeError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    vox = np.frombuffer(payload, dtype=dtype).reshape(dims)
    # frombuffer views the (immutable) bytes; cast to the native in-memory dtype
    native = vox.astype(dtype.newbyteorder("="), copy=True)
    return Volume(native, tuple(spacing))


# ---------------------------------------------------------------------------
# HU truncation and normalization


def _require_hu(vol: Volume, op: str) -> None:
    if vol.voxels.dtype != np.int16:
        raise InvalidArgumentError(f"{op} expects an int16 HU volume, got {vol.voxels.dtype}")


def truncate_hu(vol: Volume, lo: int = DEFAULT_HU_LO, hi: int = DEFAULT_HU_HI) -> Volume:
    """Clamp every voxel into [lo, hi] HU. Idempotent."""
    _require_hu(vol, "truncate_hu")
    if lo >= hi:
        raise InvalidArgumentError(f"truncate_hu needs lo < hi, got lo={lo}, hi={hi}")
    return Volume(np.clip(vol.voxels, lo, hi), vol.spacing_mm)


def normalize_truncated(vol: Volume, lo: int = DEFAULT_HU_LO, hi: int = DEFAULT_HU_HI) -> Volume:
    """Map HU values already truncated to [lo, hi] linearly onto [0, 1].

    out = (v - lo) / (hi - lo) as float32. Values outside [lo, hi]
    (callers should truncate first) are clipped so the unit-range
    invariant always holds.
    """
    _require_hu(vol, "normalize_truncated")
    if lo >= hi:
        raise InvalidArgumentError(f"normalize_truncated needs lo < hi, got lo={lo}, hi={hi}")
    unit = (vol.voxels.astype(np.float64) - lo) / float(hi - lo)
    np.clip(unit, 0.0, 1.0, out=unit)
    return Volume(unit.astype(np.float32), vol.spacing_mm)


def resample_nearest(vol: Volume, target_spacing_mm: tuple[float, float, float]) -> Volume:
    """Nearest-neighbor resample onto a grid with the target spacing.

    New dims = round(old_dims * old_spacing / target_spacing), at least 1
    per axis. Identity when target equals the source spacing.
    """
    target = tuple(float(s) for s in target_spacing_mm)
    if len(target) != 3 or any(s <= 0 for s in target):
        raise InvalidArgumentError(f"target spacing must be 3 positive reals, got {target_spacing_mm}")
    old_dims = vol.dims
    new_dims = tuple(
        max(1, int(round(old_dims[a] * vol.spacing_mm[a] / target[a]))) for a in range(3)
    )
    if new_dims == old_dims and target == vol.spacing_mm:
        return vol
    # source index for output index i: floor((i + 0.5) * old/new), clamped
    idx = []
    for a in range(3):
        src = np.floor((np.arange(new_dims[a]) + 0.5) * (old_dims[a] / new_dims[a])).astype(np.intp)
        idx.append(np.clip(src, 0, old_dims[a] - 1))
    vox = vol.voxels[np.ix_(idx[0], idx[1], idx[2])]
    return Volume(vox, target)


# ---------------------------------------------------------------------------
# Case manifests

MANIFEST_HEADER = ["case_id", "volume_path", "mask_path", "label", "anomaly_gt_path"]
VALID_CASE_LABELS = ("normal", "abnormal")


@dataclass(frozen=True)
class CaseRecord:
    """One manifest row. Paths are stored as written (typically relative
    to the manifest's directory)."""

    case_id: str
    volume_path: str
    mask_path: str
    label: str
    anomaly_gt_path: str | None = field(default=None)

    def __post_init__(self):
        if self.label not in VALID_CASE_LABELS:
            raise InvalidArgumentError(f"case {self.case_id}: label must be normal|abnormal, got {self.label!r}")


def write_manifest(records: list[CaseRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            writer.writerow(
                [rec.case_id, rec.volume_path, rec.mask_path, rec.label, rec.anomaly_gt_path or ""]
            )


def read_manifest(path) -> list[CaseRecord]:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderFormatError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise HeaderFormatError(f"{path}: bad manifest header {header}")
        records = []
        seen = set()
        for row in reader:
            if len(row) != len(MANIFEST_HEADER):
                raise HeaderFormatError(f"{path}: bad manifest row {row}")
            case_id, vol_p, mask_p, label, gt_p = row
            if case_id in seen:
                raise InvalidArgumentError(f"{path}: duplicate case_id {case_id!r}")
            seen.add(case_id)
            records.append(CaseRecord(case_id, vol_p, mask_p, label, gt_p or None))
    return records


def resolve_manifest_path(base_dir, rel_path: str) -> Path:
    """Resolve a manifest-stored path against the manifest's directory."""
    p = Path(rel_path)
    return p if p.is_absolute() else Path(base_dir) / p
