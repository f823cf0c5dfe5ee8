"""Stage 3: normalization, 2D-to-3D reverse projection, fusion, localization.

The 2D anomaly maps are masked and normalized, projected back into the CT
voxel grid by inverting the crop/resize mapping and replicating along the
collapsed axis, normalized again in 3D over the side's lung region, summed
per lung and across lungs, and finally binarized for localization.

Normalization is a percentile-based min-max: values at or below the q-th
nearest-rank percentile of the region collapse to zero, the region max maps
to one. A constant region yields all zeros (no ranking information).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyMaskError,
    InvalidArgumentError,
    OverlapError,
)
from .memory_bank import AnomalyMap2D
from .projection import ProjectedMask, ProjectionGeometry, ProjectionType, bilinear_sample

DEFAULT_PERCENTILE_Q = 50.0
DEFAULT_BINARIZE_PCT = 99.5

# fusion stage tags, in pipeline order
STAGE_PER_PROJECTION = "per_projection"
STAGE_PER_LUNG = "per_lung"
STAGE_FINAL = "final"
_STAGES = (STAGE_PER_PROJECTION, STAGE_PER_LUNG, STAGE_FINAL)

# per-lung maps are sums of up to three unit-range maps, so only the
# normalized stages promise the [0,1] range
_UNIT_RANGE_STAGES = (STAGE_PER_PROJECTION, STAGE_FINAL)


@dataclass(frozen=True)
class NormConfig:
    """Percentile floor for min-max normalization."""

    q: float = DEFAULT_PERCENTILE_Q

    def __post_init__(self):
        if not 0.0 <= self.q < 100.0:
            raise InvalidArgumentError(f"percentile q must be in [0,100), got {self.q}")


@dataclass(frozen=True)
class AnomalyVolume:
    """A 3D anomaly map in CT voxel space, tagged with its fusion stage."""

    values: np.ndarray  # (Z, Y, X) float32, zero outside region
    stage: str
    region: np.ndarray  # (Z, Y, X) bool, the lung support
    spacing_mm: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        region = np.ascontiguousarray(self.region, dtype=bool)
        if values.ndim != 3:
            raise InvalidArgumentError(f"anomaly volume must be 3D, got shape {values.shape}")
        if region.shape != values.shape:
            raise DimensionMismatchError(
                f"region shape {region.shape} != values shape {values.shape}"
            )
        if self.stage not in _STAGES:
            raise InvalidArgumentError(f"unknown stage {self.stage!r}, expected one of {_STAGES}")
        if not np.isfinite(values).all():
            raise InvalidArgumentError("anomaly volume values must be finite")
        if float(values.min(initial=0.0)) < 0.0:
            raise InvalidArgumentError("anomaly volume values must be >= 0")
        if self.stage in _UNIT_RANGE_STAGES and float(values.max(initial=0.0)) > 1.0:
            raise InvalidArgumentError(f"stage {self.stage} values must be <= 1")
        if values[~region].any():
            raise InvalidArgumentError("anomaly volume must be zero outside its region")
        for mark, arr in (("values", values), ("region", region)):
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
            object.__setattr__(self, mark, arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    def argmax_voxel(self) -> tuple[int, int, int]:
        flat = int(np.argmax(self.values))
        return tuple(int(v) for v in np.unravel_index(flat, self.values.shape))


# ---------------------------------------------------------------------------
# Percentile min-max normalization


def percentile_nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n/100)-th smallest value (1-based)."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise EmptyMaskError("percentile of an empty value set")
    if not 0.0 <= q < 100.0:
        raise InvalidArgumentError(f"percentile q must be in [0,100), got {q}")
    rank = min(max(math.ceil(q * flat.size / 100.0), 1), flat.size)
    return float(np.sort(flat)[rank - 1])


def percentile_minmax(values: np.ndarray, region: np.ndarray, q: float) -> np.ndarray:
    """Min-max over a region with the floor raised to the q-th percentile.

    Values at or below the percentile collapse to 0, the region max maps to
    1, everything outside the region is 0. A constant region maps to zeros.
    """
    vals = np.asarray(values, dtype=np.float64)
    reg = np.asarray(region, dtype=bool)
    if reg.shape != vals.shape:
        raise DimensionMismatchError(f"region shape {reg.shape} != values shape {vals.shape}")
    if not reg.any():
        raise EmptyMaskError("percentile_minmax over an empty region")
    inside = vals[reg]
    p_q = percentile_nearest_rank(inside, q)
    m = float(inside.max())
    out = np.zeros(vals.shape, dtype=np.float64)
    if m > p_q:
        out[reg] = np.clip((vals[reg] - p_q) / (m - p_q), 0.0, 1.0)
    return out


def mask_normalize_2d(amap: AnomalyMap2D, mask: ProjectedMask, q: float = DEFAULT_PERCENTILE_Q) -> np.ndarray:
    """Mask a 2D anomaly map and normalize over the in-mask pixels."""
    if mask.ptype != amap.ptype:
        raise InvalidArgumentError(
            f"mask projection {mask.ptype.value} != map projection {amap.ptype.value}"
        )
    if mask.pixels.shape != amap.pixels.shape:
        raise DimensionMismatchError(
            f"mask shape {mask.pixels.shape} != map shape {amap.pixels.shape}"
        )
    region = mask.pixels > 0
    if not region.any():
        raise EmptyMaskError(f"empty projected mask for {amap.ptype.value}")
    masked = np.where(region, amap.pixels.astype(np.float64), 0.0)
    return percentile_minmax(masked, region, q)


# ---------------------------------------------------------------------------
# Reverse projection


def back_project_plane(grid: np.ndarray, geometry: ProjectionGeometry) -> np.ndarray:
    """Invert crop_resize_to_canvas: canvas-resolution grid -> collapsed plane.

    Plane pixels inside the forward bbox sample the canvas bilinearly at the
    coordinates the forward resize drew them from; pixels outside are 0.
    """
    src = np.asarray(grid, dtype=np.float64)
    if src.shape != geometry.canvas:
        raise DimensionMismatchError(f"grid shape {src.shape} != canvas {geometry.canvas}")
    plane = np.zeros(geometry.plane_shape, dtype=np.float64)
    r0, c0, r1, c1 = geometry.bbox
    rows = (np.arange(r0, r1, dtype=np.float64) - r0 + 0.5) * geometry.scale - 0.5
    cols = (np.arange(c0, c1, dtype=np.float64) - c0 + 0.5) * geometry.scale - 0.5
    rr = np.repeat(rows, cols.size)
    cc = np.tile(cols, rows.size)
    plane[r0:r1, c0:c1] = bilinear_sample(src, rr, cc).reshape(r1 - r0, c1 - c0)
    return plane


def replicate_along_axis(plane: np.ndarray, axis: int, extent: int) -> np.ndarray:
    """Tile a collapsed-plane grid along the projection axis."""
    if axis not in (0, 1, 2):
        raise InvalidArgumentError(f"axis must be 0, 1 or 2, got {axis}")
    if extent < 1:
        raise InvalidArgumentError(f"axis extent must be >= 1, got {extent}")
    return np.repeat(np.expand_dims(plane, axis), extent, axis=axis)


def reverse_project(
    grid: np.ndarray,
    geometry: ProjectionGeometry,
    lung_region: np.ndarray,
    q: float = DEFAULT_PERCENTILE_Q,
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> AnomalyVolume:
    """Lift a normalized 2D map into CT voxel space for one projection.

    The canvas grid is mapped back onto the collapsed-plane pixel grid,
    replicated along the collapsed axis, and re-normalized in 3D over the
    side's lung region.
    """
    region = np.asarray(lung_region, dtype=bool)
    if region.ndim != 3:
        raise InvalidArgumentError(f"lung region must be 3D, got shape {region.shape}")
    ptype = geometry.ptype
    expected_plane = tuple(d for ax, d in enumerate(region.shape) if ax != ptype.axis)
    if geometry.plane_shape != expected_plane:
        raise DimensionMismatchError(
            f"{ptype.value} sidecar plane {geometry.plane_shape} does not match "
            f"volume dims {region.shape}"
        )
    plane = back_project_plane(grid, geometry)
    volume = replicate_along_axis(plane, ptype.axis, region.shape[ptype.axis])
    normalized = percentile_minmax(volume, region, q)
    return AnomalyVolume(
        values=normalized.astype(np.float32),
        stage=STAGE_PER_PROJECTION,
        region=region,
        spacing_mm=spacing_mm,
    )


# ---------------------------------------------------------------------------
# Fusion


def fuse_per_lung(
    u_sagittal: AnomalyVolume,
    u_coronal: AnomalyVolume,
    u_axial: AnomalyVolume,
    lung_mask: np.ndarray,
) -> AnomalyVolume:
    """Sum one lung's three per-projection volumes inside its mask.

    The sum is kept unscaled; dividing by three would be cancelled by the
    final normalization anyway.
    """
    mask = np.asarray(lung_mask, dtype=bool)
    parts = (u_sagittal, u_coronal, u_axial)
    for part in parts:
        if part.dims != tuple(mask.shape):
            raise DimensionMismatchError(
                f"per-projection volume dims {part.dims} != lung mask shape {mask.shape}"
            )
        if part.stage != STAGE_PER_PROJECTION:
            raise InvalidArgumentError(f"fuse_per_lung expects per-projection inputs, got {part.stage}")
    total = sum(part.values.astype(np.float64) for part in parts)
    total[~mask] = 0.0
    return AnomalyVolume(
        values=total.astype(np.float32),
        stage=STAGE_PER_LUNG,
        region=mask,
        spacing_mm=u_sagittal.spacing_mm,
    )


def fuse_final(u_right: AnomalyVolume, u_left: AnomalyVolume, q: float = DEFAULT_PERCENTILE_Q) -> AnomalyVolume:
    """Combine the per-lung volumes and normalize over the union lung region."""
    if u_right.dims != u_left.dims:
        raise DimensionMismatchError(f"lung volume dims differ: {u_right.dims} vs {u_left.dims}")
    for part in (u_right, u_left):
        if part.stage != STAGE_PER_LUNG:
            raise InvalidArgumentError(f"fuse_final expects per-lung inputs, got {part.stage}")
    if (u_right.region & u_left.region).any():
        raise OverlapError("per-lung supports overlap; lungs must be disjoint")
    union = u_right.region | u_left.region
    summed = u_right.values.astype(np.float64) + u_left.values.astype(np.float64)
    normalized = percentile_minmax(summed, union, q)
    return AnomalyVolume(
        values=normalized.astype(np.float32),
        stage=STAGE_FINAL,
        region=union,
        spacing_mm=u_right.spacing_mm,
    )


# ---------------------------------------------------------------------------
# Localization


def binarize_top(volume: AnomalyVolume, pct: float = DEFAULT_BINARIZE_PCT) -> np.ndarray:
    """Keep the voxels at or above the pct nearest-rank percentile of the region."""
    threshold = percentile_nearest_rank(volume.values[volume.region], pct)
    return volume.region & (volume.values >= threshold)


def localization_hit(pred: np.ndarray, gt: np.ndarray) -> bool:
    """True iff the predicted and ground-truth binary volumes intersect."""
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise DimensionMismatchError(f"pred shape {p.shape} != gt shape {g.shape}")
    return bool(np.any((p > 0) & (g > 0)))
