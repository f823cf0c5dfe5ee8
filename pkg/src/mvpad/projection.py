"""Stage 1: multi-view projection of masked, truncated, normalized volumes.

Each case yields six projected images, one per (lung side, plane):
(right, sagittal), (right, coronal), (right, axial), then the left side in
the same plane order. Plane collapse axes are fixed: axial collapses z,
coronal collapses y, sagittal collapses x.

Projected images are cropped to the projected lung's bounding box (plus a
2-pixel margin), isotropically resized, and zero-padded top-left onto a
fixed canvas so feature grids are comparable across cases. The crop box,
scale, and source plane shape are kept as geometry metadata for the inverse
mapping used during 3D reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatchError, EmptyMaskError, InvalidArgumentError
from .volume import Volume, normalize_truncated, truncate_hu

DEFAULT_CANVAS = (256, 256)
BBOX_MARGIN = 2

_PLANE_AXIS = {"axial": 0, "coronal": 1, "sagittal": 2}


class ProjectionType(Enum):
    """The six (side, plane) projection identifiers, in canonical order."""

    RIGHT_SAGITTAL = "right_sagittal"
    RIGHT_CORONAL = "right_coronal"
    RIGHT_AXIAL = "right_axial"
    LEFT_SAGITTAL = "left_sagittal"
    LEFT_CORONAL = "left_coronal"
    LEFT_AXIAL = "left_axial"

    @property
    def side(self) -> str:
        return self.value.split("_")[0]

    @property
    def plane(self) -> str:
        return self.value.split("_")[1]

    @property
    def axis(self) -> int:
        """Volume axis collapsed by this projection."""
        return _PLANE_AXIS[self.plane]

    @classmethod
    def from_string(cls, text: str) -> "ProjectionType":
        for ptype in cls:
            if ptype.value == text:
                return ptype
        raise InvalidArgumentError(f"unknown projection type {text!r}")


ALL_PROJECTIONS = tuple(ProjectionType)


def plane_shape(volume_dims: tuple[int, int, int], ptype: ProjectionType) -> tuple[int, int]:
    """2D shape left after collapsing the ptype's axis."""
    dims = [d for a, d in enumerate(volume_dims) if a != ptype.axis]
    return (dims[0], dims[1])


@dataclass(frozen=True)
class ProjectionGeometry:
    """Everything needed to invert a crop/resize: source plane shape, the
    crop box actually used (row0, col0, row1, col1; end-exclusive), the
    isotropic scale, and the canvas size. Resized content is anchored at
    the canvas top-left corner."""

    ptype: ProjectionType
    plane_shape: tuple[int, int]
    bbox: tuple[int, int, int, int]
    scale: float
    canvas: tuple[int, int]

    @property
    def crop_shape(self) -> tuple[int, int]:
        r0, c0, r1, c1 = self.bbox
        return (r1 - r0, c1 - c0)

    @property
    def resized_shape(self) -> tuple[int, int]:
        ch, cw = self.crop_shape
        return (
            max(1, int(round(ch * self.scale))),
            max(1, int(round(cw * self.scale))),
        )

    def to_dict(self) -> dict:
        return {
            "ptype": self.ptype.value,
            "plane_shape": list(self.plane_shape),
            "bbox": list(self.bbox),
            "scale": self.scale,
            "canvas": list(self.canvas),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionGeometry":
        return cls(
            ptype=ProjectionType.from_string(d["ptype"]),
            plane_shape=tuple(int(v) for v in d["plane_shape"]),
            bbox=tuple(int(v) for v in d["bbox"]),
            scale=float(d["scale"]),
            canvas=tuple(int(v) for v in d["canvas"]),
        )


@dataclass(frozen=True)
class ProjectedImage:
    geometry: ProjectionGeometry
    pixels: np.ndarray  # (canvas_h, canvas_w) float32 in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "pixels", _freeze(self.pixels))

    @property
    def ptype(self) -> ProjectionType:
        return self.geometry.ptype


@dataclass(frozen=True)
class ProjectedMask:
    geometry: ProjectionGeometry
    pixels: np.ndarray  # (canvas_h, canvas_w) uint8 {0, 1}

    def __post_init__(self):
        object.__setattr__(self, "pixels", _freeze(self.pixels))

    @property
    def ptype(self) -> ProjectionType:
        return self.geometry.ptype


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# Volume preparation and plane projections


def prepare_lung_volume(ct: Volume, lung: Volume) -> Volume:
    """Mask a CT to one lung, truncate to [-800, 0] HU, normalize to [0, 1].

    Non-lung voxels are forced to -1000 HU before truncation, so they land
    exactly at 0.0 in the normalized volume.
    """
    if ct.dims != lung.dims:
        raise DimensionMismatchError(f"ct dims {ct.dims} != lung mask dims {lung.dims}")
    masked = np.where(lung.voxels > 0, ct.voxels, np.int16(-1000))
    vol = Volume(masked.astype(np.int16), ct.spacing_mm)
    return normalize_truncated(truncate_hu(vol))


def prepare_unsegmented_volume(ct: Volume) -> Volume:
    """Ablation path: truncate/normalize the whole volume, no lung masking."""
    return normalize_truncated(truncate_hu(ct))


def _check_unit_volume(v: Volume, op: str) -> None:
    if v.voxels.dtype != np.float32:
        raise InvalidArgumentError(f"{op} expects a float32 unit volume, got {v.voxels.dtype}")


def mip_project(v: Volume, ptype: ProjectionType) -> np.ndarray:
    """Maximum intensity projection along the ptype's collapse axis."""
    _check_unit_volume(v, "mip_project")
    return np.max(v.voxels, axis=ptype.axis)


def aip_project(v: Volume, ptype: ProjectionType) -> np.ndarray:
    """Average intensity projection along the ptype's collapse axis."""
    _check_unit_volume(v, "aip_project")
    return np.mean(v.voxels, axis=ptype.axis, dtype=np.float64).astype(np.float32)


def project_mask(mask: Volume, ptype: ProjectionType) -> np.ndarray:
    """Logical-OR projection of a binary mask along the collapse axis."""
    return (mask.voxels > 0).max(axis=ptype.axis).astype(np.uint8)


# ---------------------------------------------------------------------------
# Crop / resize onto the canvas


def bilinear_sample(src: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample src (float64) at fractional (rows, cols), clamping at edges."""
    h, w = src.shape
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    w00 = (1.0 - fr) * (1.0 - fc)
    w01 = (1.0 - fr) * fc
    w10 = fr * (1.0 - fc)
    w11 = fr * fc
    return w00 * src[r0, c0] + w01 * src[r0, c1] + w10 * src[r1, c0] + w11 * src[r1, c1]


def nearest_sample(src: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Nearest-neighbor sampling with round-half-even (mirror-symmetric)."""
    h, w = src.shape
    ri = np.clip(np.rint(rows).astype(np.intp), 0, h - 1)
    ci = np.clip(np.rint(cols).astype(np.intp), 0, w - 1)
    return src[ri, ci]


def mask_bbox(mask2d: np.ndarray) -> tuple[int, int, int, int]:
    """Tight end-exclusive bounding box of a 2D binary mask."""
    rows = np.any(mask2d > 0, axis=1)
    cols = np.any(mask2d > 0, axis=0)
    if not rows.any():
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    r = np.nonzero(rows)[0]
    c = np.nonzero(cols)[0]
    return (int(r[0]), int(c[0]), int(r[-1]) + 1, int(c[-1]) + 1)


def crop_resize_to_canvas(
    img: np.ndarray,
    mask2d: np.ndarray,
    ptype: ProjectionType,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
) -> tuple[ProjectedImage, ProjectedMask]:
    """Crop both grids to the mask bbox + 2-pixel margin, resize isotropically
    (bilinear image, nearest mask), and zero-pad to the canvas.

    The resized image is multiplied by the resized mask, which keeps the mask
    a superset of the image's nonzero support by construction.
    """
    if img.shape != mask2d.shape:
        raise DimensionMismatchError(f"image {img.shape} and mask {mask2d.shape} shapes differ")
    h0, w0 = img.shape
    r0, c0, r1, c1 = mask_bbox(mask2d)
    r0 = max(0, r0 - BBOX_MARGIN)
    c0 = max(0, c0 - BBOX_MARGIN)
    r1 = min(h0, r1 + BBOX_MARGIN)
    c1 = min(w0, c1 + BBOX_MARGIN)
    crop_h, crop_w = r1 - r0, c1 - c0
    ch, cw = canvas
    scale = min(ch / crop_h, cw / crop_w)
    geometry = ProjectionGeometry(
        ptype=ptype,
        plane_shape=(h0, w0),
        bbox=(r0, c0, r1, c1),
        scale=scale,
        canvas=(ch, cw),
    )
    rh, rw = geometry.resized_shape

    # pixel-center aligned sampling positions back in crop coordinates
    src_r = (np.arange(rh, dtype=np.float64) + 0.5) / scale - 0.5
    src_c = (np.arange(rw, dtype=np.float64) + 0.5) / scale - 0.5
    rows = np.repeat(src_r, rw)
    cols = np.tile(src_c, rh)

    crop_img = img[r0:r1, c0:c1].astype(np.float64)
    crop_mask = (mask2d[r0:r1, c0:c1] > 0).astype(np.uint8)
    resized_img = bilinear_sample(crop_img, rows, cols).reshape(rh, rw)
    resized_mask = nearest_sample(crop_mask, rows, cols).reshape(rh, rw)
    resized_img *= resized_mask

    canvas_img = np.zeros((ch, cw), dtype=np.float64)
    canvas_mask = np.zeros((ch, cw), dtype=np.uint8)
    canvas_img[:rh, :rw] = resized_img
    canvas_mask[:rh, :rw] = resized_mask
    canvas_img = np.clip(canvas_img, 0.0, 1.0).astype(np.float32)
    return ProjectedImage(geometry, canvas_img), ProjectedMask(geometry, canvas_mask)


# ---------------------------------------------------------------------------
# Per-case driver


def project_case(
    ct: Volume,
    lung_pair,
    method: str = "mip",
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    unsegmented: bool = False,
) -> list[tuple[ProjectedImage, ProjectedMask]]:
    """Project one case into the six canonical (image, mask) pairs.

    With ``unsegmented=True`` the lung masks are ignored (the no-segmentation
    ablation): the whole truncated volume is projected and the "mask" is the
    full plane, so the right/left pairs coincide.
    """
    if method not in ("mip", "aip"):
        raise InvalidArgumentError(f"projection method must be mip|aip, got {method!r}")
    project = mip_project if method == "mip" else aip_project

    prepared: dict[str, Volume] = {}
    masks: dict[str, Volume] = {}
    if unsegmented:
        whole = prepare_unsegmented_volume(ct)
        full = Volume(np.ones(ct.dims, dtype=np.uint8), ct.spacing_mm)
        for side in ("right", "left"):
            prepared[side] = whole
            masks[side] = full
    else:
        for side in ("right", "left"):
            side_mask = lung_pair.mask(side)
            prepared[side] = prepare_lung_volume(ct, side_mask)
            masks[side] = side_mask

    out = []
    for ptype in ALL_PROJECTIONS:
        img2d = project(prepared[ptype.side], ptype)
        m2d = project_mask(masks[ptype.side], ptype)
        if not m2d.any():
            raise EmptyMaskError(f"empty {ptype.side} lung mask, cannot project {ptype.value}")
        out.append(crop_resize_to_canvas(np.asarray(img2d, dtype=np.float64), m2d, ptype, canvas))
    return out
