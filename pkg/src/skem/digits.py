"""Synthetic 7-segment digit images and their IDX (MNIST-style) storage.

Each active segment of the figure-8 layout is a Gaussian point cloud; the
points are clamped to a square box 1.8 times the glyph height and binned
into a 28x28 grid whose counts are scaled so the busiest cell is 255.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IdxDimensionError, IdxMagicError, IdxTruncatedError

__all__ = [
    "NCELLS",
    "DIGIT_ORDER",
    "DIGIT_RECIPES",
    "SegmentGeometry",
    "DigitImage",
    "DigitDataset",
    "sample_segments",
    "rasterize",
    "render_digit",
    "generate_dataset",
    "write_idx",
    "read_idx",
    "read_idx_images",
    "read_idx_labels",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
]

NCELLS = 28
BOX_FACTOR = 1.8
# dataset class c (1-based) holds digit DIGIT_ORDER[c - 1]; class 10 is digit 0
DIGIT_ORDER = (1, 2, 3, 4, 5, 6, 7, 8, 9, 0)

# digit -> (vertical segments, horizontal segments); segment numbers are 1-based
DIGIT_RECIPES = {
    0: ((1, 2, 4, 5), (3, 6)),
    1: ((1, 2), ()),
    2: ((1, 4), (3, 6, 7)),
    3: ((1, 2), (3, 6, 7)),
    4: ((1, 2, 5), (7,)),
    5: ((2, 5), (3, 6, 7)),
    6: ((2, 4, 5), (3, 6, 7)),
    7: ((1, 2), (6,)),
    8: ((1, 2, 4, 5), (3, 6, 7)),
    9: ((1, 2, 5), (3, 6, 7)),
}

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class SegmentGeometry:
    """Segment half-length ``D``, half-width ``d`` and covariance scale ``n_sigma``."""

    D: float = 2.0
    d: float = 0.5
    n_sigma: float = 1.0

    def __post_init__(self):
        for name in ("D", "d", "n_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def w(self) -> float:
        return self.D + self.d

    @property
    def h(self) -> float:
        return 2.0 * self.w

    @property
    def centers(self) -> np.ndarray:
        """``(7, 2)`` segment centres, rows are segments 1..7."""
        w, h = self.w, self.h
        return np.array([[w, w], [w, -w], [0, -h], [-w, -w], [-w, w], [0, h], [0, 0]], dtype=float)

    def centers_for(self, digit: int) -> np.ndarray:
        c = self.centers
        if digit == 1:
            c[0] = (0.0, self.w)
            c[1] = (0.0, -self.w)
        return c

    @property
    def bounding_box(self) -> tuple[float, float, float, float]:
        """``(x1, x2, y1, y2)`` of the bare glyph."""
        bx = self.D + 2 * self.d
        by = 2 * self.D + 3 * self.d
        return (-bx, bx, -by, by)

    @property
    def image_half_extent(self) -> float:
        return abs(BOX_FACTOR * self.bounding_box[3])

    @property
    def vertical_cov(self) -> np.ndarray:
        return self.n_sigma * np.diag([self.d, self.D])

    @property
    def horizontal_cov(self) -> np.ndarray:
        return self.n_sigma * np.diag([self.D, self.d])


@dataclass(frozen=True)
class DigitImage:
    pixels: np.ndarray  # (28, 28) uint8, row 0 is the top of the glyph
    label: int


@dataclass
class DigitDataset:
    """Images indexed ``[class - 1, sample]`` with classes ordered as :data:`DIGIT_ORDER`."""

    images: np.ndarray  # (10, n_per_digit, 28, 28) uint8
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        if self.images.ndim != 4 or self.images.shape[0] != 10 or self.images.shape[2:] != (NCELLS, NCELLS):
            raise ValueError(f"expected (10, n, 28, 28) images, got {self.images.shape}")

    @property
    def n_per_digit(self) -> int:
        return self.images.shape[1]

    def image(self, cls_label: int, sample: int) -> DigitImage:
        return DigitImage(self.images[cls_label - 1, sample], DIGIT_ORDER[cls_label - 1])


def sample_segments(geom: SegmentGeometry, digit: int, samples_per_segment: int,
                    rng: np.random.Generator) -> np.ndarray:
    """``(2, n)`` point cloud: vertical segments first, then horizontal."""
    if digit not in DIGIT_RECIPES:
        raise ValueError("unsupported digit, must be between 0 and 9")
    vert, horiz = DIGIT_RECIPES[digit]
    centers = geom.centers_for(digit)
    sd_v = np.sqrt(np.diag(geom.vertical_cov))
    sd_h = np.sqrt(np.diag(geom.horizontal_cov))
    clouds = []
    for segs, sd in ((vert, sd_v), (horiz, sd_h)):
        for s in segs:
            z = rng.standard_normal((2, samples_per_segment))
            clouds.append(sd[:, None] * z + centers[s - 1][:, None])
    if not clouds:
        return np.zeros((2, 0))
    return np.concatenate(clouds, axis=1)


def rasterize(points: np.ndarray, half_extent: float) -> np.ndarray:
    """Bin ``(2, n)`` points into a 28x28 count grid, row 0 at the top.

    Points are clamped onto the square ``[-half_extent, half_extent]``. Columns
    use half-open cells from the left edge; rows use ``ceil`` from the bottom
    edge clamped into range. The clamped right edge lands in the last column.
    """
    lim = half_extent
    dx = 2.0 * lim / NCELLS
    x = np.clip(points[0], -lim, lim)
    y = np.clip(points[1], -lim, lim)
    col = np.clip(np.floor((x + lim) / dx).astype(int), 0, NCELLS - 1)
    row_from_bottom = np.clip(np.ceil((y + lim) / dx).astype(int), 1, NCELLS) - 1
    counts = np.zeros((NCELLS, NCELLS), dtype=np.int64)
    np.add.at(counts, (NCELLS - 1 - row_from_bottom, col), 1)
    return counts


def _to_uint8(counts: np.ndarray) -> np.ndarray:
    peak = counts.max()
    if peak == 0:
        return np.zeros(counts.shape, dtype=np.uint8)
    scaled = (255.0 / peak) * counts
    return np.floor(scaled + 0.5).astype(np.uint8)


def render_digit(geom: SegmentGeometry, digit: int, samples_per_segment: int,
                 rng: np.random.Generator) -> DigitImage:
    """Draw one noisy 28x28 greyscale image of ``digit``."""
    if samples_per_segment < 1:
        raise ValueError("samples_per_segment must be >= 1")
    pts = sample_segments(geom, digit, samples_per_segment, rng)
    counts = rasterize(pts, geom.image_half_extent)
    return DigitImage(_to_uint8(counts), digit)


def generate_dataset(geom: SegmentGeometry, n_per_digit: int, samples_per_segment: int,
                     rng: np.random.Generator) -> DigitDataset:
    """``n_per_digit`` images of every digit, classes in :data:`DIGIT_ORDER`."""
    if n_per_digit < 1 or samples_per_segment < 1:
        raise ValueError("counts must be >= 1")
    images = np.zeros((10, n_per_digit, NCELLS, NCELLS), dtype=np.uint8)
    for c, digit in enumerate(DIGIT_ORDER):
        for n in range(n_per_digit):
            images[c, n] = render_digit(geom, digit, samples_per_segment, rng).pixels
    params = {"D": geom.D, "d": geom.d, "n_sigma": geom.n_sigma,
              "samples_per_segment": samples_per_segment}
    return DigitDataset(images, params)


# -- IDX ---------------------------------------------------------------------

def write_idx(dataset: DigitDataset, images_path, labels_path) -> tuple[Path, Path]:
    """Write images as IDX3 and raw digit labels (0..9) as IDX1, class-major order."""
    n = dataset.n_per_digit
    if n == 0:
        raise ValueError("cannot write an empty dataset")
    count = 10 * n
    pixels = dataset.images.reshape(count, NCELLS, NCELLS)
    labels = np.repeat(np.array(DIGIT_ORDER, dtype=np.uint8), n)
    images_path, labels_path = Path(images_path), Path(labels_path)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, NCELLS, NCELLS))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, count))
        fh.write(labels.tobytes())
    return images_path, labels_path


def _read_header(buf: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    size = 4 * (ndims + 1)
    if len(buf) < size:
        raise IdxTruncatedError(f"{path}: header needs {size} bytes, file has {len(buf)}")
    found, *dims = struct.unpack(">" + "I" * (ndims + 1), buf[:size])
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(dims)


def read_idx_images(path) -> np.ndarray:
    """``(count, rows, cols)`` uint8 pixels from an IDX3 file."""
    buf = Path(path).read_bytes()
    count, rows, cols = _read_header(buf, IDX_IMAGES_MAGIC, 3, path)
    need = count * rows * cols
    payload = buf[16:]
    if len(payload) < need:
        raise IdxTruncatedError(f"{path}: expected {need} pixel bytes, found {len(payload)}")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(count, rows, cols).copy()


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (count,) = _read_header(buf, IDX_LABELS_MAGIC, 1, path)
    payload = buf[8:]
    if len(payload) < count:
        raise IdxTruncatedError(f"{path}: expected {count} label bytes, found {len(payload)}")
    return np.frombuffer(payload[:count], dtype=np.uint8).copy()


def read_idx(images_path, labels_path) -> DigitDataset:
    """Load an image/label IDX pair and regroup it by class order [1..9, 0]."""
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if pixels.shape[1:] != (NCELLS, NCELLS):
        raise IdxDimensionError(f"images are {pixels.shape[1:]}, expected 28x28")
    if pixels.shape[0] != labels.size:
        raise IdxDimensionError(f"{pixels.shape[0]} images but {labels.size} labels")
    if labels.size and labels.max() > 9:
        raise IdxDimensionError(f"label {labels.max()} is not a digit")
    groups = [pixels[labels == digit] for digit in DIGIT_ORDER]
    sizes = {g.shape[0] for g in groups}
    if len(sizes) != 1 or 0 in sizes:
        raise IdxDimensionError(f"unequal or empty digit groups: {[g.shape[0] for g in groups]}")
    return DigitDataset(np.stack(groups))
