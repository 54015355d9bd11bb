"""Point annotations and focal inverse-distance target maps.

Annotations are (row, col) object centers on a fixed pixel grid. Training
targets are built by taking the exact Euclidean distance d from every pixel
to its nearest annotated cell and mapping it through

    1 / (d ** (alpha * d + beta) + c)

so annotated pixels read exactly 1/c and the response decays faster the
further a pixel sits from any object. Maps are stored single-precision and
round-trip through a small binary container (see ``write_fidt``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DEFAULT_ALPHA = 0.02
DEFAULT_BETA = 0.75
DEFAULT_C = 1.0

FIDT_MAGIC = b"FIDTMAP1"


def round_half_up(values):
    """Elementwise round-to-nearest with .5 ties going up."""
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass
class PointSet:
    """Object centers in (row, col) coordinates on a height x width grid.

    Coordinates may be sub-pixel. Wherever an integer cell is needed they
    are rounded half-up, and at most one point may land on any cell.
    """

    points: list = field(default_factory=list)
    height: int = 0
    width: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(
                f"grid must be at least 1x1, got {self.height}x{self.width}"
            )
        self.points = [(float(r), float(c)) for r, c in self.points]
        for r, c in self.points:
            if not (0.0 <= r < self.height and 0.0 <= c < self.width):
                raise ValueError(
                    f"point ({r}, {c}) lies outside the {self.height}x{self.width} grid"
                )
        cells = self.pixel_cells()
        if len(cells) != len(np.unique(cells, axis=0)):
            raise ValueError("duplicate annotation: two points round to the same pixel")

    def __len__(self):
        return len(self.points)

    def as_array(self) -> np.ndarray:
        """Points as a float64 (n, 2) array."""
        return np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def pixel_cells(self) -> np.ndarray:
        """Integer (n, 2) cells after half-up rounding, clipped to the grid."""
        if not self.points:
            return np.zeros((0, 2), dtype=np.int64)
        cells = round_half_up(self.as_array())
        cells[:, 0] = np.clip(cells[:, 0], 0, self.height - 1)
        cells[:, 1] = np.clip(cells[:, 1], 0, self.width - 1)
        return cells


@dataclass
class FidtMap:
    """Dense localization target plus the response parameters that built it."""

    values: np.ndarray
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    c: float = DEFAULT_C

    @property
    def shape(self):
        return self.values.shape


def distance_transform(points: PointSet) -> np.ndarray:
    """Exact Euclidean distance from every pixel to its nearest annotation.

    Returns a float64 (height, width) grid; annotated cells read 0.
    """
    if len(points) == 0:
        raise ValueError("no annotations")
    free = np.ones((points.height, points.width), dtype=bool)
    cells = points.pixel_cells()
    free[cells[:, 0], cells[:, 1]] = False
    return ndimage.distance_transform_edt(free)


def inverse_distance_response(d, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, c=DEFAULT_C):
    """The scalar response 1 / (d ** (alpha * d + beta) + c), vectorized."""
    d = np.asarray(d, dtype=np.float64)
    return 1.0 / (d ** (alpha * d + beta) + c)


def fidt_map(points: PointSet, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, c=DEFAULT_C) -> FidtMap:
    """Build the focal inverse-distance target for a point set.

    The map is computed in double precision and stored as float32. With the
    default c = 1 the annotated pixels read exactly 1.0 and all values lie
    in (0, 1].
    """
    if c <= 0:
        raise ValueError(f"division-by-zero guard violated: c must be > 0, got {c!r}")
    if alpha < 0 or beta < 0:
        raise ValueError(f"negative response exponents: alpha={alpha}, beta={beta}")
    d = distance_transform(points)
    return FidtMap(
        inverse_distance_response(d, alpha, beta, c).astype(np.float32),
        alpha=alpha,
        beta=beta,
        c=c,
    )


def center_mask(points: PointSet) -> np.ndarray:
    """Boolean (height, width) grid that is True exactly on annotated cells."""
    mask = np.zeros((points.height, points.width), dtype=bool)
    if len(points):
        cells = points.pixel_cells()
        mask[cells[:, 0], cells[:, 1]] = True
    return mask


def write_fidt(path, values) -> None:
    """Serialize a map as magic, u32-LE dims, then f32-LE row-major values."""
    if isinstance(values, FidtMap):
        values = values.values
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {values.shape}")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(FIDT_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(values.tobytes())


def read_fidt(path) -> np.ndarray:
    """Read a map written by :func:`write_fidt`; returns float32 (h, w)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(FIDT_MAGIC))
        if magic != FIDT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated header")
        h, w = struct.unpack("<II", header)
        payload = fh.read(4 * h * w)
        if len(payload) != 4 * h * w:
            raise ValueError(f"{path}: truncated payload, expected {h}x{w} floats")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after {h}x{w} payload")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()
