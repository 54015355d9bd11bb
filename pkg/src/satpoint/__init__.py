"""satpoint: point-supervised localization of small objects in overhead imagery.

The toolkit turns point annotations into dense inverse-distance target
maps, trains a two-stage stacked hourglass network (attention-gated stem,
learnable guided upsampling) against them with a penalty-reduced focal
loss, decodes predicted maps back into points via local-maxima selection,
and scores results with distance-thresholded one-to-one matching.

This top-level module exposes the numpy-only core (targets, decoding,
matching, data plumbing). The torch-based network, training loop, and CLI
live in :mod:`satpoint.model`, :mod:`satpoint.training`, and
:mod:`satpoint.cli` and are imported on demand.
"""

__version__ = "0.1.0"

from .decode import (ADAPTIVE_RATIO, EMPTY_MAP_THRESHOLD, Detection,
                     DetectionSet, decode_location_map)
from .evaluate import (DENSITY_BUCKETS, MatchReport, density_bucket_report,
                       density_label, match_points, metrics,
                       metrics_from_counts, plot_density_report, summarize)
from .fidt import (FidtMap, PointSet, center_mask, distance_transform,
                   fidt_map, inverse_distance_response, read_fidt,
                   round_half_up, write_fidt)
from .data import (AnnotatedPatch, SynthConfig, augment_patch, cutmix_patch,
                   hflip_patch, load_annotations, load_dataset, load_image,
                   merge_detections, patch_rng, read_manifest, save_patch,
                   split_dataset, synth_dataset, synth_scene,
                   tile_for_inference, tile_starts, vflip_patch,
                   write_manifest)

__all__ = [
    "__version__",
    "ADAPTIVE_RATIO", "EMPTY_MAP_THRESHOLD",
    "Detection", "DetectionSet", "decode_location_map",
    "DENSITY_BUCKETS", "MatchReport", "density_bucket_report",
    "density_label", "match_points", "metrics", "metrics_from_counts",
    "plot_density_report", "summarize",
    "FidtMap", "PointSet", "center_mask", "distance_transform", "fidt_map",
    "inverse_distance_response", "read_fidt", "round_half_up", "write_fidt",
    "AnnotatedPatch", "SynthConfig", "augment_patch", "cutmix_patch",
    "hflip_patch", "load_annotations", "load_dataset", "load_image",
    "merge_detections", "patch_rng", "read_manifest", "save_patch",
    "split_dataset", "synth_dataset", "synth_scene", "tile_for_inference",
    "tile_starts", "vflip_patch", "write_manifest",
]
