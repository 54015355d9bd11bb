"""Dataset plumbing: annotated-patch I/O, splits, augmentation, synthesis,
and tiling for large-scene inference.

A dataset directory holds 8-bit RGB PNGs with JSON sidecars of the same
stem, ``{"points": [[row, col], ...]}``, plus an optional ``manifest.txt``
listing patch ids one per line. Everything here is seeded explicitly;
per-patch RNG streams derive from (seed, epoch, patch id) so augmentation
does not depend on iteration order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .decode import Detection, DetectionSet
from .fidt import PointSet, round_half_up

MANIFEST_NAME = "manifest.txt"


@dataclass
class AnnotatedPatch:
    """One training/eval sample: float image (3, H, W) in [0, 1] plus points."""

    image: np.ndarray
    points: PointSet
    id: str = ""


def _stable_id_hash(patch_id: str) -> int:
    digest = hashlib.blake2s(patch_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def patch_rng(seed: int, patch_id: str, epoch: int = 0) -> np.random.Generator:
    """Independent RNG stream for one patch, reproducible across workers."""
    return np.random.default_rng([int(seed), int(epoch), _stable_id_hash(patch_id)])


# ---------------------------------------------------------------------------
# disk I/O


def save_patch(patch: AnnotatedPatch, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    img = np.clip(round_half_up(patch.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.transpose(img, (1, 2, 0)), mode="RGB").save(
        out_dir / f"{patch.id}.png"
    )
    payload = {"points": [[r, c] for r, c in patch.points.points]}
    with open(out_dir / f"{patch.id}.json", "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_image(image_path) -> np.ndarray:
    """Read a PNG into a float32 (3, H, W) array scaled to [0, 1]."""
    image_path = Path(image_path)
    if not image_path.exists():
        raise FileNotFoundError(f"image file missing: {image_path}")
    with Image.open(image_path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return np.transpose(rgb, (2, 0, 1)).astype(np.float32) / 255.0


def load_annotations(image_path) -> AnnotatedPatch:
    """Load one PNG + JSON sidecar pair into an AnnotatedPatch."""
    image_path = Path(image_path)
    sidecar = image_path.with_suffix(".json")
    if not image_path.exists():
        raise FileNotFoundError(f"{image_path.stem}: image file missing ({image_path})")
    if not sidecar.exists():
        raise FileNotFoundError(f"{image_path.stem}: annotation sidecar missing ({sidecar})")
    image = load_image(image_path)
    with open(sidecar) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "points" not in payload:
        raise ValueError(f"{image_path.stem}: sidecar must be an object with a 'points' list")
    try:
        points = PointSet(payload["points"], height=image.shape[1], width=image.shape[2])
    except ValueError as exc:
        raise ValueError(f"{image_path.stem}: {exc}") from exc
    return AnnotatedPatch(image=image, points=points, id=image_path.stem)


def write_manifest(dataset_dir, ids) -> Path:
    path = Path(dataset_dir) / MANIFEST_NAME
    with open(path, "w") as fh:
        for patch_id in ids:
            fh.write(f"{patch_id}\n")
    return path


def read_manifest(path) -> list:
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def load_dataset(dataset_dir, manifest=None) -> list:
    """Load every patch named by the manifest (or every PNG when absent)."""
    dataset_dir = Path(dataset_dir)
    if manifest is None and (dataset_dir / MANIFEST_NAME).exists():
        manifest = dataset_dir / MANIFEST_NAME
    if manifest is not None:
        ids = read_manifest(manifest)
    else:
        ids = sorted(p.stem for p in dataset_dir.glob("*.png"))
    if not ids:
        raise FileNotFoundError(f"no patches found under {dataset_dir}")
    return [load_annotations(dataset_dir / f"{patch_id}.png") for patch_id in ids]


def split_dataset(patches, train_fraction: float = 0.8, seed: int = 0):
    """Deterministic shuffled split; train takes round(train_fraction * n)."""
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    if len(patches) < 5 and train_fraction < 1.0:
        raise ValueError(f"need at least 5 patches to split, got {len(patches)}")
    order = np.random.default_rng(seed).permutation(len(patches))
    n_train = int(math.floor(train_fraction * len(patches) + 0.5))
    train = [patches[i] for i in order[:n_train]]
    val = [patches[i] for i in order[n_train:]]
    return train, val


# ---------------------------------------------------------------------------
# augmentation


def hflip_patch(patch: AnnotatedPatch) -> AnnotatedPatch:
    """Mirror left-right; a point's column c maps to W - 1 - c."""
    w = patch.points.width
    points = PointSet(
        [(r, w - 1.0 - c) for r, c in patch.points.points],
        height=patch.points.height,
        width=w,
    )
    return AnnotatedPatch(patch.image[:, :, ::-1].copy(), points, patch.id)


def vflip_patch(patch: AnnotatedPatch) -> AnnotatedPatch:
    """Mirror top-bottom; a point's row r maps to H - 1 - r."""
    h = patch.points.height
    points = PointSet(
        [(h - 1.0 - r, c) for r, c in patch.points.points],
        height=h,
        width=patch.points.width,
    )
    return AnnotatedPatch(patch.image[:, ::-1, :].copy(), points, patch.id)


def cutmix_patch(patch: AnnotatedPatch, partner: AnnotatedPatch, rng):
    """Paste a random rectangle cut from `partner` into `patch`.

    The rectangle area is a uniform [0.1, 0.4] fraction of the patch;
    source and destination corners are drawn independently, and imported
    points are translated by the corner difference. Point membership is
    decided on half-up-rounded pixel cells. Returns None when no points
    survive, which callers treat as "discard this augmentation".
    """
    h, w = patch.points.height, patch.points.width
    if (partner.points.height, partner.points.width) != (h, w):
        raise ValueError("cutmix requires equally sized patches")

    area = rng.uniform(0.1, 0.4) * h * w
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    rect_h = int(np.clip(round_half_up(math.sqrt(area * aspect)), 1, h))
    rect_w = int(np.clip(round_half_up(math.sqrt(area / aspect)), 1, w))
    src_r = int(rng.integers(0, h - rect_h + 1))
    src_c = int(rng.integers(0, w - rect_w + 1))
    dst_r = int(rng.integers(0, h - rect_h + 1))
    dst_c = int(rng.integers(0, w - rect_w + 1))

    image = patch.image.copy()
    image[:, dst_r:dst_r + rect_h, dst_c:dst_c + rect_w] = \
        partner.image[:, src_r:src_r + rect_h, src_c:src_c + rect_w]

    def inside(cell, r0, c0):
        return r0 <= cell[0] < r0 + rect_h and c0 <= cell[1] < c0 + rect_w

    points = []
    for (r, c), cell in zip(patch.points.points, patch.points.pixel_cells()):
        if not inside(cell, dst_r, dst_c):
            points.append((r, c))
    shift_r, shift_c = dst_r - src_r, dst_c - src_c
    for (r, c), cell in zip(partner.points.points, partner.points.pixel_cells()):
        if inside(cell, src_r, src_c):
            # a float coordinate may sit up to half a pixel left/above its
            # rounded cell; clamping at 0 keeps the cell unchanged
            points.append((max(r + shift_r, 0.0), max(c + shift_c, 0.0)))

    if not points:
        return None
    return AnnotatedPatch(image, PointSet(points, height=h, width=w), patch.id)


def augment_patch(patch, partner, rng, hflip=True, vflip=True, cutmix=True):
    """Apply the training-time augmentation stack with 0.5 draws each."""
    out = patch
    if hflip and rng.random() < 0.5:
        out = hflip_patch(out)
    if vflip and rng.random() < 0.5:
        out = vflip_patch(out)
    if cutmix and partner is not None and rng.random() < 0.5:
        mixed = cutmix_patch(out, partner, rng)
        if mixed is not None:
            out = mixed
    return out


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SynthConfig:
    """Knobs for the synthetic stand-in dataset.

    Blobs are `blob_size` x `blob_size` center-peaked bumps added onto the
    background; annotations are the integer blob centers. `min_separation`
    is the smallest allowed Euclidean distance between centers (1.0 keeps
    just the one-point-per-pixel rule).
    """

    height: int = 64
    width: int = 64
    n_points: tuple = (5, 30)
    blob_size: int = 3
    blob_contrast: tuple = (0.35, 0.6)
    background: str = "flat"  # flat | gradient | clutter
    clutter_density: float = 0.002
    noise_sigma: float = 0.01
    min_separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.background not in ("flat", "gradient", "clutter"):
            raise ValueError(f"unknown background kind: {self.background!r}")
        if self.blob_size < 1 or self.blob_size % 2 == 0:
            raise ValueError(f"blob_size must be odd and positive, got {self.blob_size}")
        lo, hi = self.n_points
        if not 1 <= lo <= hi:
            raise ValueError(f"bad n_points range: {self.n_points}")


def _blob_kernel(size: int) -> np.ndarray:
    """Center-peaked kernel with value 1.0 at the middle cell."""
    half = size // 2
    rr, cc = np.mgrid[-half:half + 1, -half:half + 1]
    dist = np.sqrt(rr * rr + cc * cc)
    kernel = 1.0 - 0.5 * dist / max(half, 1)
    return np.clip(kernel, 0.0, None)


def _place_centers(rng, config: SynthConfig, n: int) -> np.ndarray:
    margin = config.blob_size // 2
    lo_r, hi_r = margin, config.height - margin
    lo_c, hi_c = margin, config.width - margin
    if lo_r >= hi_r or lo_c >= hi_c:
        raise ValueError(
            f"cannot place {config.blob_size}x{config.blob_size} blobs on a "
            f"{config.height}x{config.width} scene"
        )
    centers = []
    attempts = 0
    limit = 1000 * n
    min_sq = config.min_separation ** 2
    while len(centers) < n:
        attempts += 1
        if attempts > limit:
            raise ValueError(
                f"cannot place {n} blob centers with separation "
                f">= {config.min_separation} on {config.height}x{config.width}"
            )
        r = int(rng.integers(lo_r, hi_r))
        c = int(rng.integers(lo_c, hi_c))
        if any((r - pr) ** 2 + (c - pc) ** 2 < min_sq for pr, pc in centers):
            continue
        if any(r == pr and c == pc for pr, pc in centers):
            continue
        centers.append((r, c))
    return np.asarray(centers, dtype=np.int64)


def _background(rng, config: SynthConfig) -> np.ndarray:
    level = rng.uniform(0.12, 0.3)
    field_ = np.full((config.height, config.width), level, dtype=np.float64)
    if config.background == "gradient":
        angle = rng.uniform(0.0, 2.0 * math.pi)
        span = rng.uniform(0.05, 0.15)
        rr, cc = np.mgrid[0:config.height, 0:config.width]
        ramp = rr * math.sin(angle) + cc * math.cos(angle)
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
        field_ += span * ramp
    return field_


def _add_clutter(field_, rng, config: SynthConfig, centers) -> None:
    n_specks = int(round(config.clutter_density * config.height * config.width))
    placed = 0
    attempts = 0
    while placed < n_specks and attempts < 200 * max(n_specks, 1):
        attempts += 1
        r = int(rng.integers(0, config.height))
        c = int(rng.integers(0, config.width))
        if len(centers) and np.min((centers[:, 0] - r) ** 2 + (centers[:, 1] - c) ** 2) < 9:
            continue  # keep confusers at least 3 px away from true objects
        field_[r, c] += rng.uniform(0.15, 0.4)
        placed += 1


def synth_scene(config: SynthConfig, index: int = 0) -> AnnotatedPatch:
    """Render one synthetic annotated scene; bit-deterministic in (seed, index)."""
    rng = np.random.default_rng([int(config.seed), int(index)])
    n = int(rng.integers(config.n_points[0], config.n_points[1] + 1))
    centers = _place_centers(rng, config, n)
    field_ = _background(rng, config)
    if config.background == "clutter":
        _add_clutter(field_, rng, config, centers)

    kernel = _blob_kernel(config.blob_size)
    half = config.blob_size // 2
    for (r, c) in centers:
        contrast = rng.uniform(*config.blob_contrast)
        field_[r - half:r + half + 1, c - half:c + half + 1] += contrast * kernel
    if config.noise_sigma > 0:
        field_ += rng.normal(0.0, config.noise_sigma, field_.shape)

    gray = np.clip(field_, 0.0, 1.0).astype(np.float32)
    image = np.stack([gray, gray, gray])
    points = PointSet(
        [(float(r), float(c)) for r, c in centers],
        height=config.height,
        width=config.width,
    )
    return AnnotatedPatch(image, points, id=f"synth-{index:05d}")


def synth_dataset(config: SynthConfig, count: int) -> list:
    """`count` scenes drawn from per-index substreams of config.seed."""
    return [synth_scene(config, index) for index in range(count)]


# ---------------------------------------------------------------------------
# tiling for large scenes


def tile_starts(size: int, tile: int, overlap: int) -> list:
    """Window start offsets covering `size`; the last window is end-aligned."""
    if overlap >= tile:
        raise ValueError(f"overlap {overlap} must be smaller than tile {tile}")
    if size <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, size - tile + 1, stride))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def tile_for_inference(image: np.ndarray, tile: int = 256, overlap: int = 32):
    """Split a (3, H, W) image into overlapping tiles.

    Returns (tile_image, row_offset, col_offset) triples. Images smaller
    than `tile` in a dimension produce a single full-extent window there.
    """
    if overlap >= tile:
        raise ValueError(f"overlap {overlap} must be smaller than tile {tile}")
    _, h, w = image.shape
    tile_h = min(tile, h)
    tile_w = min(tile, w)
    tiles = []
    for r0 in tile_starts(h, tile_h, min(overlap, tile_h - 1)):
        for c0 in tile_starts(w, tile_w, min(overlap, tile_w - 1)):
            tiles.append((image[:, r0:r0 + tile_h, c0:c0 + tile_w], r0, c0))
    return tiles


def merge_detections(tile_sets, height: int, width: int,
                     merge_radius: float = 1.0) -> DetectionSet:
    """Merge per-tile detections into global coordinates.

    Duplicates from overlap zones are removed by keeping the higher-score
    member of any pair closer than `merge_radius` pixels.
    """
    shifted = []
    for det_set, r0, c0 in tile_sets:
        for det in det_set:
            shifted.append(Detection(det.row + r0, det.col + c0, det.score))
    shifted.sort(key=lambda d: (-d.score, d.row, d.col))

    kept = []
    kept_coords = np.zeros((0, 2), dtype=np.float64)
    radius_sq = merge_radius ** 2
    for det in shifted:
        if len(kept):
            d2 = (kept_coords[:, 0] - det.row) ** 2 + (kept_coords[:, 1] - det.col) ** 2
            if float(d2.min()) < radius_sq:
                continue
        kept.append(det)
        kept_coords = np.vstack([kept_coords, [det.row, det.col]])
    kept.sort(key=lambda d: (d.row, d.col))
    return DetectionSet(kept, height, width)
