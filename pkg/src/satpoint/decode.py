"""Local-maxima decoding of location maps into discrete detections.

A pixel becomes a detection when it equals the maximum of its own 3x3
neighborhood (stride-1 window, replicate borders) and clears an adaptive
threshold delta = (100 / 255) * map-max. Maps whose global maximum falls
below 0.10 decode to an empty set regardless of local structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EMPTY_MAP_THRESHOLD = 0.10
ADAPTIVE_RATIO = 100.0 / 255.0


@dataclass
class Detection:
    row: int
    col: int
    score: float


@dataclass
class DetectionSet:
    """Decoded peak locations for one map of size height x width."""

    detections: list
    height: int
    width: int

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def coords(self) -> np.ndarray:
        """Detection centers as a float64 (n, 2) array of (row, col)."""
        if not self.detections:
            return np.zeros((0, 2), dtype=np.float64)
        return np.asarray([(d.row, d.col) for d in self.detections], dtype=np.float64)

    def to_payload(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "detections": [[d.row, d.col, d.score] for d in self.detections],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "DetectionSet":
        dets = [Detection(int(r), int(c), float(s)) for r, c, s in payload["detections"]]
        return cls(dets, int(payload["height"]), int(payload["width"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_payload(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DetectionSet":
        with open(path) as fh:
            return cls.from_payload(json.load(fh))


def decode_location_map(values, empty_threshold=EMPTY_MAP_THRESHOLD,
                        adaptive_ratio=ADAPTIVE_RATIO) -> DetectionSet:
    """Decode one 2-d location map into a DetectionSet.

    Comparisons run in float64. Plateau pixels that tie their window maximum
    are all kept, so the rule stays a pure per-pixel predicate.
    """
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {m.shape}")
    if np.isnan(m).any():
        raise ValueError("location map contains NaN")
    height, width = m.shape
    peak = float(m.max())
    if peak < empty_threshold:
        return DetectionSet([], height, width)
    delta = adaptive_ratio * peak
    window_max = ndimage.maximum_filter(m, size=3, mode="nearest")
    keep = (m == window_max) & (m >= delta)
    rows, cols = np.nonzero(keep)
    dets = [Detection(int(r), int(c), float(m[r, c])) for r, c in zip(rows, cols)]
    return DetectionSet(dets, height, width)
