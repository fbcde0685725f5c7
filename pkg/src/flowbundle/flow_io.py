"""Middlebury .flo ingestion, 3x3 patch sampling, preprocessing, persistence.

File formats (all little-endian):

.flo          bytes 0-3 float32 202021.25, int32 width, int32 height, then
              height rows x width cols x (float32 u, float32 v), row-major.
dataset       magic "OFPD", u32 version = 1, u64 record count; per record
              frame u32, row u16, col u16, contrast f64, mean 2xf64,
              patch 18xf64.
"""
from __future__ import annotations

import io
import struct
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from . import patch_core
from .errors import (
    BadDims,
    BadMagic,
    EmptyResult,
    InsufficientValidArea,
    TooFew,
    TruncatedFile,
)

FLO_MAGIC = np.float32(202021.25)
FLO_INVALID_THRESHOLD = 1e9  # |u| or |v| above this marks an unknown pixel
MAX_FLO_DIM = 100_000

DATASET_MAGIC = b"OFPD"
DATASET_VERSION = 1
_RECORD_STRUCT = struct.Struct("<IHHd2d18d")


@dataclass
class FlowField:
    """A dense ground-truth flow field; data has shape (height, width, 2)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError("flow data must have shape (h, w, 2)")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def valid_mask(self) -> np.ndarray:
        """Pixels with finite flow below the unknown-value sentinel."""
        finite = np.all(np.isfinite(self.data), axis=2)
        small = np.all(np.abs(self.data) <= FLO_INVALID_THRESHOLD, axis=2)
        return finite & small


def read_flo(data: bytes) -> FlowField:
    """Parse .flo bytes, bit-exactly."""
    if len(data) < 4 or np.frombuffer(data[:4], dtype="<f4")[0] != FLO_MAGIC:
        raise BadMagic("missing 202021.25 float tag")
    if len(data) < 12:
        raise TruncatedFile("header truncated")
    width, height = struct.unpack_from("<ii", data, 4)
    if width <= 0 or height <= 0 or width > MAX_FLO_DIM or height > MAX_FLO_DIM:
        raise BadDims(f"implausible dimensions {width}x{height}")
    expected = 12 + 8 * width * height
    if len(data) < expected:
        raise TruncatedFile(f"need {expected} bytes, got {len(data)}")
    payload = np.frombuffer(data[12:expected], dtype="<f4")
    return FlowField(payload.reshape(height, width, 2).copy())


def write_flo(fieldobj: FlowField) -> bytes:
    """Serialize to .flo bytes; read_flo(write_flo(f)) == f bit-exactly."""
    out = io.BytesIO()
    out.write(np.float32(FLO_MAGIC).tobytes())
    out.write(struct.pack("<ii", fieldobj.width, fieldobj.height))
    out.write(fieldobj.data.astype("<f4", copy=False).tobytes())
    return out.getvalue()


def read_flo_file(path) -> FlowField:
    with open(path, "rb") as fh:
        return read_flo(fh.read())


def write_flo_file(path, fieldobj: FlowField) -> None:
    with open(path, "wb") as fh:
        fh.write(write_flo(fieldobj))


# -- datasets ------------------------------------------------------------------

PatchRecord = namedtuple("PatchRecord",
                         ["patch", "frame", "pixel", "contrast", "mean_flow"])


@dataclass
class PatchDataset:
    """Sampled 3x3 patches plus provenance.

    contrast and means always refer to the original (raw) patch so a record
    can be reconstructed as contrast * patch + mean even after normalization.
    """

    patches: np.ndarray           # (n, 18) float64
    frames: np.ndarray            # (n,) uint32
    rows: np.ndarray              # (n,) uint16
    cols: np.ndarray              # (n,) uint16
    contrast: np.ndarray          # (n,) float64
    means: np.ndarray             # (n, 2) float64
    seed: int = 0
    normalized: bool = False
    provenance: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.patches.shape[0]

    def record(self, i: int) -> PatchRecord:
        """One record with its provenance; pixel is the window's (row, col)."""
        return PatchRecord(self.patches[i], int(self.frames[i]),
                           (int(self.rows[i]), int(self.cols[i])),
                           float(self.contrast[i]), self.means[i])

    def subset(self, indices, note: str | None = None) -> "PatchDataset":
        indices = np.asarray(indices)
        out = replace(
            self,
            patches=self.patches[indices],
            frames=self.frames[indices],
            rows=self.rows[indices],
            cols=self.cols[indices],
            contrast=self.contrast[indices],
            means=self.means[indices],
            provenance=list(self.provenance),
        )
        if note:
            out.provenance.append(note)
        return out


def make_dataset(patches, frames=None, rows=None, cols=None, contrast=None,
                 means=None, seed=0, normalized=False, provenance=None) -> PatchDataset:
    """Assemble a dataset, computing contrast/means from the patches if omitted."""
    patches = np.asarray(patches, dtype=np.float64).reshape(-1, 18)
    n = patches.shape[0]
    if contrast is None:
        contrast = patch_core.contrast_norm(patches)
    if means is None:
        means = patch_core.mean_flow(patches)
    return PatchDataset(
        patches=patches,
        frames=np.zeros(n, dtype=np.uint32) if frames is None else np.asarray(frames, dtype=np.uint32),
        rows=np.zeros(n, dtype=np.uint16) if rows is None else np.asarray(rows, dtype=np.uint16),
        cols=np.zeros(n, dtype=np.uint16) if cols is None else np.asarray(cols, dtype=np.uint16),
        contrast=np.asarray(contrast, dtype=np.float64),
        means=np.asarray(means, dtype=np.float64).reshape(n, 2),
        seed=seed,
        normalized=normalized,
        provenance=list(provenance) if provenance else [],
    )


def _window_validity(valid: np.ndarray) -> np.ndarray:
    """(h-2, w-2) bool: does the 3x3 window at each top-left contain only valid pixels."""
    h, w = valid.shape
    counts = np.zeros((h - 2, w - 2), dtype=np.int32)
    for dr in range(3):
        for dc in range(3):
            counts += valid[dr:dr + h - 2, dc:dc + w - 2]
    return counts == 9


def sample_patches(fields, per_frame: int, seed: int) -> PatchDataset:
    """Draw per_frame random valid 3x3 windows from each frame (raw patches).

    Window positions are drawn uniformly without replacement within a frame;
    windows touching an invalid pixel are rejected and redrawn, with a budget
    of 10 * per_frame draws per frame. Each frame uses an independent RNG
    stream derived as seed XOR frame index, so results do not depend on
    evaluation order.
    """
    if per_frame < 1:
        raise ValueError("per_frame must be >= 1")
    all_patches, all_frames, all_rows, all_cols = [], [], [], []
    for frame_idx, fieldobj in enumerate(fields):
        h, w = fieldobj.height, fieldobj.width
        if h < 3 or w < 3:
            raise InsufficientValidArea(f"frame {frame_idx} is smaller than 3x3")
        ok = _window_validity(fieldobj.valid_mask())
        n_pos = (h - 2) * (w - 2)
        rng = np.random.default_rng(seed ^ frame_idx)
        chosen = []
        seen = set()
        budget = 10 * per_frame
        while len(chosen) < per_frame and budget > 0:
            pos = int(rng.integers(0, n_pos))
            budget -= 1
            if pos in seen:
                continue
            seen.add(pos)
            r, c = divmod(pos, w - 2)
            if ok[r, c]:
                chosen.append((r, c))
        if len(chosen) < per_frame:
            raise InsufficientValidArea(
                f"frame {frame_idx}: {len(chosen)}/{per_frame} windows after budget")
        data = fieldobj.data.astype(np.float64)
        for r, c in chosen:
            u = data[r + patch_core.GRID_ROWS, c + patch_core.GRID_COLS, 0]
            v = data[r + patch_core.GRID_ROWS, c + patch_core.GRID_COLS, 1]
            all_patches.append(np.concatenate([u, v]))
            all_frames.append(frame_idx)
            all_rows.append(r)
            all_cols.append(c)
    ds = make_dataset(
        np.array(all_patches).reshape(-1, 18),
        frames=all_frames, rows=all_rows, cols=all_cols,
        seed=seed, normalized=False,
        provenance=[f"sample(per_frame={per_frame}, seed={seed})"],
    )
    return ds


def nearest_rank_threshold(values: np.ndarray, top_percent: float) -> float:
    """Value at the (100 - top_percent) nearest-rank percentile.

    Records >= this threshold form the top top_percent of the sample (ties
    included, so the result may slightly exceed the nominal fraction).
    """
    values = np.sort(np.asarray(values, dtype=float))
    n = len(values)
    idx = int(np.floor((100.0 - top_percent) / 100.0 * n))
    return values[min(idx, n - 1)]


def top_contrast_filter(ds: PatchDataset, percent: float) -> PatchDataset:
    """Keep the top `percent` of records by original contrast, then normalize."""
    if not 0 < percent <= 100:
        raise ValueError("percent must be in (0, 100]")
    if len(ds) == 0:
        raise EmptyResult("empty dataset")
    threshold = nearest_rank_threshold(ds.contrast, percent)
    keep = np.nonzero(ds.contrast >= threshold)[0]
    if keep.size == 0:
        raise EmptyResult("no record passes the contrast threshold")
    out = ds.subset(keep, note=f"top_contrast_filter(percent={percent})")
    normalized, _, _ = patch_core.normalize_patches(out.patches)
    out.patches = normalized
    out.normalized = True
    return out


def downsample(ds: PatchDataset, n: int, seed: int) -> PatchDataset:
    """Uniform without-replacement subsample of n records, order-preserving."""
    if n > len(ds):
        raise TooFew(f"asked for {n} of {len(ds)} records")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(ds), size=n, replace=False))
    return ds.subset(idx, note=f"downsample(n={n}, seed={seed})")


# -- dataset serialization -----------------------------------------------------

def dataset_to_bytes(ds: PatchDataset) -> bytes:
    out = io.BytesIO()
    out.write(DATASET_MAGIC)
    out.write(struct.pack("<IQ", DATASET_VERSION, len(ds)))
    for i in range(len(ds)):
        out.write(_RECORD_STRUCT.pack(
            int(ds.frames[i]), int(ds.rows[i]), int(ds.cols[i]),
            float(ds.contrast[i]), float(ds.means[i, 0]), float(ds.means[i, 1]),
            *ds.patches[i].tolist(),
        ))
    return out.getvalue()


def dataset_from_bytes(data: bytes) -> PatchDataset:
    if data[:4] != DATASET_MAGIC:
        raise BadMagic("not an OFPD dataset")
    version, count = struct.unpack_from("<IQ", data, 4)
    if version != DATASET_VERSION:
        raise BadMagic(f"unsupported dataset version {version}")
    expected = 16 + count * _RECORD_STRUCT.size
    if len(data) < expected:
        raise TruncatedFile(f"need {expected} bytes, got {len(data)}")
    patches = np.empty((count, 18))
    frames = np.empty(count, dtype=np.uint32)
    rows = np.empty(count, dtype=np.uint16)
    cols = np.empty(count, dtype=np.uint16)
    contrast = np.empty(count)
    means = np.empty((count, 2))
    off = 16
    for i in range(count):
        rec = _RECORD_STRUCT.unpack_from(data, off)
        off += _RECORD_STRUCT.size
        frames[i], rows[i], cols[i] = rec[0], rec[1], rec[2]
        contrast[i] = rec[3]
        means[i] = rec[4:6]
        patches[i] = rec[6:]
    return PatchDataset(patches, frames, rows, cols, contrast, means,
                        provenance=["loaded"])


def save_dataset(ds: PatchDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(ds))


def load_dataset(path) -> PatchDataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def dataset_to_csv(ds: PatchDataset) -> str:
    cols = ["frame", "row", "col", "contrast", "mean_u", "mean_v"]
    cols += [f"u{i}" for i in range(1, 10)] + [f"v{i}" for i in range(1, 10)]
    lines = [",".join(cols)]
    for i in range(len(ds)):
        vals = [str(int(ds.frames[i])), str(int(ds.rows[i])), str(int(ds.cols[i])),
                f"{ds.contrast[i]:.17g}", f"{ds.means[i, 0]:.17g}", f"{ds.means[i, 1]:.17g}"]
        vals += [f"{x:.17g}" for x in ds.patches[i]]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
