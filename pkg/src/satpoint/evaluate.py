"""Distance-thresholded point matching and dataset-level metrics.

Predictions match references one-to-one when their Euclidean distance is at
most gamma pixels (default 1). Candidate pairs are sorted by (distance,
pred_index, ref_index) and accepted greedily, which is deterministic and
exact whenever points are separated by more than 2 * gamma. Precision,
recall and F1 follow the usual formulas with the 0/0 convention of 0, and
dataset aggregation is micro (summed tp/fp/fn before the ratios).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import DetectionSet
from .fidt import PointSet

# Image-density buckets by reference count: (label, low, high); high=None
# means unbounded. Together the ranges partition [1, inf).
DENSITY_BUCKETS = (
    ("extremely sparse", 1, 5),
    ("sparse", 6, 20),
    ("moderate", 21, 45),
    ("relatively high", 46, 100),
    ("high", 101, 800),
    ("extremely dense", 801, None),
)


@dataclass
class MatchReport:
    """Outcome of matching one prediction set against one reference set."""

    tp: int
    fp: int
    fn: int
    pairs: list  # (pred_index, ref_index, distance) for each accepted pair
    gamma: float


def _as_coords(obj) -> np.ndarray:
    if isinstance(obj, DetectionSet):
        return obj.coords()
    if isinstance(obj, PointSet):
        return obj.as_array()
    arr = np.asarray(obj, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (n, 2) point coordinates, got shape {arr.shape}")
    return arr


def match_points(pred, ref, gamma: float = 1.0) -> MatchReport:
    """Greedy one-to-one matching of predictions to references within gamma."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    p = _as_coords(pred)
    r = _as_coords(ref)
    if len(p) == 0 or len(r) == 0:
        return MatchReport(0, len(p), len(r), [], gamma)

    diff = p[:, None, :] - r[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    cand_p, cand_r = np.nonzero(dist <= gamma)
    candidates = sorted(
        (dist[i, j], int(i), int(j)) for i, j in zip(cand_p, cand_r)
    )

    taken_p = set()
    taken_r = set()
    pairs = []
    for d, i, j in candidates:
        if i in taken_p or j in taken_r:
            continue
        taken_p.add(i)
        taken_r.add(j)
        pairs.append((i, j, float(d)))
    tp = len(pairs)
    return MatchReport(tp, len(p) - tp, len(r) - tp, pairs, gamma)


def metrics_from_counts(tp: int, fp: int, fn: int) -> dict:
    """Precision/recall/F1 from raw counts; every 0/0 reads 0."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "tp": int(tp),
        "fp": int(fp),
        "fn": int(fn),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def metrics(report: MatchReport) -> dict:
    return metrics_from_counts(report.tp, report.fp, report.fn)


def summarize(reports) -> dict:
    """Micro-averaged metrics over an iterable of MatchReports."""
    tp = fp = fn = 0
    for rep in reports:
        tp += rep.tp
        fp += rep.fp
        fn += rep.fn
    return metrics_from_counts(tp, fp, fn)


def density_label(ref_count: int) -> str:
    """Bucket label for an image with the given reference count."""
    if ref_count < 1:
        raise ValueError("density buckets start at one reference per image")
    for label, low, high in DENSITY_BUCKETS:
        if high is None or ref_count <= high:
            return label
    raise AssertionError("unreachable: buckets cover [1, inf)")


def density_bucket_report(per_image) -> list:
    """Bucket per-image reports by reference count.

    `per_image` holds (MatchReport, ref_count) tuples. Returns one row per
    bucket with summed counts and micro metrics inside the bucket; empty
    buckets keep zero counts so the table always has six rows.
    """
    rows = []
    for label, low, high in DENSITY_BUCKETS:
        tp = fp = fn = 0
        n_images = 0
        for rep, ref_count in per_image:
            if ref_count < low or (high is not None and ref_count > high):
                continue
            n_images += 1
            tp += rep.tp
            fp += rep.fp
            fn += rep.fn
        row = {
            "label": label,
            "count_range": [low, high],
            "n_images": n_images,
        }
        row.update(metrics_from_counts(tp, fp, fn))
        rows.append(row)
    return rows


def plot_density_report(rows, path) -> None:
    """Render bucket metrics as lines over an image-count bar underlay."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [row["label"] for row in rows]
    x = np.arange(len(rows))
    fig, ax_counts = plt.subplots(figsize=(8.0, 4.5))
    ax_counts.bar(x, [row["n_images"] for row in rows], color="0.85", width=0.6,
                  label="images")
    ax_counts.set_ylabel("images in bucket")

    ax_metric = ax_counts.twinx()
    for key, marker in (("precision", "o"), ("recall", "s"), ("f1", "^")):
        ax_metric.plot(x, [row[key] for row in rows], marker=marker, label=key)
    ax_metric.set_ylim(0.0, 1.05)
    ax_metric.set_ylabel("metric value")

    ax_counts.set_xticks(x)
    ax_counts.set_xticklabels(labels, rotation=20, ha="right")
    handles, names = ax_metric.get_legend_handles_labels()
    bar_handles, bar_names = ax_counts.get_legend_handles_labels()
    ax_metric.legend(handles + bar_handles, names + bar_names, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
