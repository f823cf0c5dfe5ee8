"""Stage 2: per-projection memory banks and nearest-neighbor anomaly scoring.

A bank aggregates the patch features of the normal training images for one
projection type, then keeps a greedy k-center (farthest-point) coreset.
Test images are scored by the exact Euclidean distance of each grid feature
to its nearest bank entry; the distance grid is bilinearly painted onto the
canvas, optionally Gaussian-smoothed, and its maximum is the projection's
anomaly score.

Reported distances are exact float64 with a fixed summation order: the bulk
path uses a BLAS norm expansion only to shortlist candidates and re-measures
them directly, so it agrees bit-for-bit with scanning every entry. Ties
break to the lowest index everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatchError,
    ExtractorMismatchError,
    HeaderFormatError,
    InvalidArgumentError,
    PayloadSizeError,
)
from .features import FeatureGrid
from .projection import ProjectionType, bilinear_sample

DEFAULT_CORESET_FRAC = 0.10
DEFAULT_SMOOTHING_SIGMA = 4.0


@dataclass(frozen=True)
class MemoryBank:
    """Coreset-sampled nominal features for one projection type."""

    ptype: ProjectionType
    entries: np.ndarray  # (C, D) float32
    extractor_hash: str
    coreset_frac: float
    source_count: int

    def __post_init__(self):
        entries = np.ascontiguousarray(self.entries, dtype=np.float32)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise InvalidArgumentError(f"bank entries must be (C>=1, D), got shape {entries.shape}")
        if not np.isfinite(entries).all():
            raise InvalidArgumentError("bank entries must be finite")
        if not 0.0 < self.coreset_frac <= 1.0:
            raise InvalidArgumentError(f"coreset_frac must be in (0,1], got {self.coreset_frac}")
        if self.source_count < entries.shape[0]:
            raise InvalidArgumentError(
                f"source_count {self.source_count} < bank size {entries.shape[0]}"
            )
        if entries.flags.writeable:
            entries = entries.copy()
            entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def count(self) -> int:
        return self.entries.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class AnomalyMap2D:
    """Canvas-resolution nearest-neighbor distance map for one projection."""

    ptype: ProjectionType
    pixels: np.ndarray  # (h, w) float32, >= 0
    score: float

    def __post_init__(self):
        pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 2:
            raise InvalidArgumentError(f"anomaly map must be 2D, got shape {pixels.shape}")
        if float(pixels.min(initial=0.0)) < 0.0:
            raise InvalidArgumentError("anomaly map pixels must be >= 0")
        if pixels.size and float(self.score) != float(pixels.max()):
            raise InvalidArgumentError("anomaly map score must equal the max pixel")
        if pixels.flags.writeable:
            pixels = pixels.copy()
            pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)


# ---------------------------------------------------------------------------
# Aggregation and greedy coreset


def aggregate_bank(train_grids: list[FeatureGrid]) -> np.ndarray:
    """Concatenate grid features across training images into an (N, D) set.

    All grids must share projection type and extractor hash. Duplicates are
    retained; the coreset step decides what survives.
    """
    if not train_grids:
        raise InvalidArgumentError("aggregate_bank needs at least one feature grid")
    first = train_grids[0]
    for grid in train_grids[1:]:
        if grid.ptype != first.ptype:
            raise ExtractorMismatchError(
                f"mixed projection types in bank: {first.ptype.value} vs {grid.ptype.value}"
            )
        if grid.extractor_hash != first.extractor_hash:
            raise ExtractorMismatchError("mixed extractor hashes in bank aggregation")
        if grid.feature_dim != first.feature_dim:
            raise DimensionMismatchError("mixed feature dims in bank aggregation")
    return np.vstack([grid.flat() for grid in train_grids])


def greedy_coreset(points: np.ndarray, C: int) -> np.ndarray:
    """Deterministic farthest-point (greedy k-center) selection.

    The first center is the point farthest from the mean of all points; each
    following center is the point farthest from its nearest chosen center.
    Ties go to the lowest unchosen index. Returns indices in selection order.

    The per-center distance update runs as a float32 BLAS norm expansion:
    selection quality is insensitive to the low bits, and the state arrays
    are walked C times. Chosen points are pinned to -1 in the min-distance
    state, below any squared distance, so argmax never re-picks them and its
    first-occurrence rule keeps ties on the lowest index (exact duplicates
    produce bitwise-equal state values).
    """
    pts = np.ascontiguousarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise InvalidArgumentError(f"points must be (N>=1, D), got shape {pts.shape}")
    n = pts.shape[0]
    if not 1 <= C <= n:
        raise InvalidArgumentError(f"coreset size must satisfy 1 <= C <= {n}, got {C}")
    pts64 = pts.astype(np.float64)
    diff = pts64 - pts64.mean(axis=0)
    first = int(np.argmax(np.einsum("ij,ij->i", diff, diff)))
    selected = np.empty(C, dtype=np.int64)
    selected[0] = first
    if C == 1:
        return selected
    norms = np.einsum("ij,ij->i", pts, pts)
    min_sqdist = np.full(n, np.inf, dtype=np.float32)
    min_sqdist[first] = -1.0
    d2 = np.empty(n, dtype=np.float32)
    for k in range(1, C):
        prev = int(selected[k - 1])
        np.multiply(pts @ pts[prev], np.float32(-2.0), out=d2)
        d2 += norms
        d2 += norms[prev]
        np.minimum(min_sqdist, d2, out=min_sqdist)
        best = int(np.argmax(min_sqdist))
        selected[k] = best
        min_sqdist[best] = -1.0
    return selected


def coreset_size(n: int, frac: float) -> int:
    return max(1, min(n, int(round(frac * n))))


def build_bank(train_grids: list[FeatureGrid], coreset_frac: float = DEFAULT_CORESET_FRAC) -> MemoryBank:
    """Aggregate training grids and keep a greedy coreset of the features."""
    raw = aggregate_bank(train_grids)
    if not 0.0 < coreset_frac <= 1.0:
        raise InvalidArgumentError(f"coreset_frac must be in (0,1], got {coreset_frac}")
    size = coreset_size(raw.shape[0], coreset_frac)
    if coreset_frac >= 1.0:
        keep = np.arange(raw.shape[0])
    else:
        keep = greedy_coreset(raw, size)
    return MemoryBank(
        ptype=train_grids[0].ptype,
        entries=raw[keep],
        extractor_hash=train_grids[0].extractor_hash,
        coreset_frac=coreset_frac,
        source_count=raw.shape[0],
    )


# ---------------------------------------------------------------------------
# Nearest-neighbor scoring


def nn_distance(query: np.ndarray, bank: MemoryBank) -> tuple[float, int]:
    """Exact Euclidean distance to the nearest bank entry (tie: lowest index)."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if bank.count < 1:
        raise InvalidArgumentError("cannot query an empty bank")
    if q.shape[0] != bank.feature_dim:
        raise DimensionMismatchError(f"query dim {q.shape[0]} != bank dim {bank.feature_dim}")
    diff = bank.entries.astype(np.float64) - q
    sqdist = (diff * diff).sum(axis=1)
    idx = int(np.argmin(sqdist))
    return float(np.sqrt(sqdist[idx])), idx


_NN_BLOCK = 256  # keeps the per-block score matrix cache-resident


def bulk_nn_distance(queries: np.ndarray, entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest-entry squared distances and indices for many queries.

    A float32 BLAS |e|^2 - 2q.e expansion (the per-query |q|^2 term cancels
    out of the comparison) narrows each query to the entries within a safety
    margin of its minimum; those few candidates are then re-measured with
    the plain elementwise sum, so the returned values and lowest-index tie
    wins are identical to scanning every entry directly. The margin dwarfs
    the expansion's worst-case rounding error, which keeps the true nearest
    entry inside the shortlist.
    """
    q = np.ascontiguousarray(queries, dtype=np.float64)
    e = np.ascontiguousarray(entries, dtype=np.float64)
    if q.ndim != 2 or e.ndim != 2 or q.shape[1] != e.shape[1]:
        raise DimensionMismatchError(f"query shape {q.shape} incompatible with entries {e.shape}")
    q32 = q.astype(np.float32)
    e32 = e.astype(np.float32)
    e32t = e32.T.copy()
    en32 = np.einsum("ij,ij->i", e32, e32)
    en_max = float(en32.max(initial=0.0))
    best = np.empty(q.shape[0], dtype=np.float64)
    best_idx = np.empty(q.shape[0], dtype=np.int64)
    for start in range(0, q.shape[0], _NN_BLOCK):
        block = q32[start : start + _NN_BLOCK]
        # values beyond float32 range turn the shortlist into NaNs; that is
        # fine, the empty-candidate fallback below rescans those rows exactly
        with np.errstate(over="ignore", invalid="ignore"):
            qn = np.einsum("ij,ij->i", block, block)
            approx = block @ e32t
            approx *= np.float32(-2.0)
            approx += en32[None, :]
            # margin way above the float32 expansion's worst-case rounding
            # error, so the true nearest entry (and every exact tie) makes
            # the shortlist
            cut = approx.min(axis=1) + 1e-3 * np.maximum(1.0, qn + en_max)
        rows, cols = (approx <= cut[:, None]).nonzero()
        bounds = np.searchsorted(rows, np.arange(block.shape[0] + 1))
        for row in range(block.shape[0]):
            cand = cols[bounds[row] : bounds[row + 1]]
            if cand.size == 0:  # float32 range overflow: fall back to a full scan
                cand = np.arange(e.shape[0])
            diff = e[cand] - q[start + row]
            d2 = (diff * diff).sum(axis=1)
            j = int(np.argmin(d2))
            best[start + row] = d2[j]
            best_idx[start + row] = cand[j]
    return best, best_idx


def _distance_grid(test_grid: FeatureGrid, bank: MemoryBank) -> np.ndarray:
    sqdist, _ = bulk_nn_distance(test_grid.flat(), bank.entries)
    return np.sqrt(sqdist).reshape(test_grid.grid_shape)


def _check_compatible(test_grid: FeatureGrid, bank: MemoryBank) -> None:
    if test_grid.ptype != bank.ptype:
        raise ExtractorMismatchError(
            f"grid projection {test_grid.ptype.value} != bank projection {bank.ptype.value}"
        )
    if test_grid.extractor_hash != bank.extractor_hash:
        raise ExtractorMismatchError("feature grid and bank were built with different extractors")
    if test_grid.feature_dim != bank.feature_dim:
        raise DimensionMismatchError(
            f"grid feature dim {test_grid.feature_dim} != bank dim {bank.feature_dim}"
        )


def anomaly_map(
    test_grid: FeatureGrid,
    bank: MemoryBank,
    smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA,
) -> AnomalyMap2D:
    """Score one projected image against its bank.

    The per-location nearest-neighbor distances are bilinearly upsampled from
    the feature grid (cell centers anchored at patch centers) to canvas
    resolution, optionally Gaussian-smoothed, and the max pixel is the score.
    """
    _check_compatible(test_grid, bank)
    if smoothing_sigma < 0:
        raise InvalidArgumentError(f"smoothing_sigma must be >= 0, got {smoothing_sigma}")
    dgrid = _distance_grid(test_grid, bank)
    h, w = test_grid.canvas
    half = (test_grid.patch_size - 1) / 2.0
    gi = (np.arange(h, dtype=np.float64) - half) / test_grid.stride
    gj = (np.arange(w, dtype=np.float64) - half) / test_grid.stride
    rows = np.repeat(gi, w)
    cols = np.tile(gj, h)
    painted = bilinear_sample(dgrid, rows, cols).reshape(h, w)
    if smoothing_sigma > 0:
        painted = ndimage.gaussian_filter(painted, sigma=smoothing_sigma, mode="reflect")
    pixels = painted.astype(np.float32)
    return AnomalyMap2D(ptype=test_grid.ptype, pixels=pixels, score=float(pixels.max()))


# ---------------------------------------------------------------------------
# MBNK1 persistence


def bank_filename(ptype: ProjectionType) -> str:
    return f"bank_{ptype.value}.mbnk"


def save_bank(bank: MemoryBank, path) -> None:
    header = {
        "magic": "MBNK1",
        "projection": bank.ptype.value,
        "feature_dim": bank.feature_dim,
        "count": bank.count,
        "extractor_hash": bank.extractor_hash,
        "coreset_frac": bank.coreset_frac,
    }
    payload = np.ascontiguousarray(bank.entries, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload.tobytes())


def load_bank(path) -> MemoryBank:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise HeaderFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderFormatError(f"{path}: malformed header ({exc})") from exc
    if not isinstance(header, dict) or header.get("magic") != "MBNK1":
        raise HeaderFormatError(f"{path}: bad magic, expected MBNK1")
    try:
        ptype = ProjectionType.from_string(header["projection"])
        dim = int(header["feature_dim"])
        count = int(header["count"])
        extractor_hash = str(header["extractor_hash"])
        coreset_frac = float(header["coreset_frac"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderFormatError(f"{path}: incomplete header ({exc})") from exc
    expected = count * dim * 4
    payload = raw[newline + 1 :]
    if len(payload) != expected:
        raise PayloadSizeError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    entries = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    # the wire format does not carry the pre-coreset count; count is the
    # tightest value satisfying the bank invariant
    return MemoryBank(
        ptype=ptype,
        entries=entries.astype(np.float32, copy=True),
        extractor_hash=extractor_hash,
        coreset_frac=coreset_frac,
        source_count=count,
    )
