"""Training loop, checkpointing, and dataset-level evaluation.

Batching is a plain seeded loop over the patch list (no worker processes),
so a fixed seed reproduces the loss log bit-for-bit on the same hardware.
Checkpoints are a torch parameter archive plus a JSON sidecar of the same
stem carrying the model config, epoch, optimizer hyperparameters, seed,
normalization statistics, and the per-epoch history.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import random
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .data import augment_patch, load_dataset, patch_rng, split_dataset
from .decode import decode_location_map
from .evaluate import (MatchReport, density_bucket_report, match_points,
                       metrics_from_counts, plot_density_report, summarize)
from .fidt import center_mask, fidt_map
from .model.hourglass import ModelConfig, PointLocalizer
from .model.loss import center_focal_loss

# Table-style component study: (label, directory slug, attention, upsampler,
# published reference F1 in percent).
ABLATION_VARIANTS = (
    ("baseline", "00_baseline", False, "bilinear", 64.42),
    ("+attention", "01_attention", True, "bilinear", 65.32),
    ("+upsampler", "02_upsampler", False, "deformable", 65.52),
    ("full", "03_full", True, "deformable", 66.12),
)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def normalization_stats(patches):
    """Per-channel mean/std over a patch list, shaped (3, 1, 1) for broadcast."""
    stacked = np.stack([p.image for p in patches]).astype(np.float64)
    mean = stacked.mean(axis=(0, 2, 3)).reshape(3, 1, 1)
    std = stacked.std(axis=(0, 2, 3)).reshape(3, 1, 1)
    std = np.maximum(std, 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)


def patches_to_batch(patches, mean, std, alpha, beta, c):
    """Stack normalized images, target maps, and center masks into tensors."""
    images = np.stack([(p.image - mean) / std for p in patches]).astype(np.float32)
    targets = np.stack(
        [fidt_map(p.points, alpha, beta, c).values for p in patches]
    )[:, None]
    masks = np.stack([center_mask(p.points) for p in patches])[:, None]
    return (
        torch.from_numpy(images),
        torch.from_numpy(targets),
        torch.from_numpy(masks),
    )


def train_step(model, optimizer, images, targets, masks) -> float:
    """One optimizer update on one batch; returns the summed per-stage loss."""
    model.train()
    optimizer.zero_grad()
    outputs = model(images)
    loss = outputs[0].new_zeros(())
    for stage_map in outputs:
        loss = loss + center_focal_loss(stage_map, targets, masks)
    loss.backward()
    optimizer.step()
    return float(loss.detach().item())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, meta: dict, optimizer=None) -> None:
    """Write `path` (parameter archive) and a JSON sidecar of the same stem."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path, with_optimizer_state=False):
    """Rebuild the model from a checkpoint pair; returns (model, meta[, opt])."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint archive missing: {path}")
    if not sidecar.exists():
        raise FileNotFoundError(f"checkpoint sidecar missing: {sidecar}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    model = PointLocalizer(ModelConfig.from_dict(meta["model_config"]))
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model.load_state_dict(payload["model"], strict=True)
    if with_optimizer_state:
        return model, meta, payload.get("optimizer")
    return model, meta


def _norm_from_meta(meta):
    mean = np.asarray(meta["norm_mean"], dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(meta["norm_std"], dtype=np.float32).reshape(3, 1, 1)
    return mean, std


# ---------------------------------------------------------------------------
# inference + evaluation


def predict_map(model, image, mean, std) -> np.ndarray:
    """Final-stage location map for one (3, H, W) image.

    Sizes that do not divide the pyramid factor are edge-padded on the
    bottom/right and the output is cropped back, so any image works here
    even though the model itself rejects odd shapes.
    """
    factor = 2 ** model.config.hourglass_levels
    _, h, w = image.shape
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    norm = ((image - mean) / std).astype(np.float32)
    if pad_h or pad_w:
        norm = np.pad(norm, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(norm[None]))[-1]
    return out[0, 0, :h, :w].numpy()


def evaluate_patches(model, patches, mean, std, gamma=1.0):
    """Match decoded detections against annotations for every patch.

    Returns (micro summary dict, list of (patch_id, MatchReport, ref_count)).
    """
    per_image = []
    for patch in patches:
        located = decode_location_map(predict_map(model, patch.image, mean, std))
        report = match_points(located, patch.points, gamma)
        per_image.append((patch.id, report, len(patch.points)))
    summary = summarize(report for _, report, _ in per_image)
    summary["gamma"] = gamma
    summary["n_images"] = len(per_image)
    return summary, per_image


def per_image_payload(per_image) -> list:
    return [
        {
            "id": patch_id,
            "ref_count": ref_count,
            "tp": report.tp,
            "fp": report.fp,
            "fn": report.fn,
            "gamma": report.gamma,
            "pairs": [[i, j, d] for i, j, d in report.pairs],
        }
        for patch_id, report, ref_count in per_image
    ]


def reports_from_payload(entries) -> list:
    """Inverse of per_image_payload, for recomputing metrics from disk."""
    out = []
    for entry in entries:
        report = MatchReport(
            tp=int(entry["tp"]),
            fp=int(entry["fp"]),
            fn=int(entry["fn"]),
            pairs=[(int(i), int(j), float(d)) for i, j, d in entry["pairs"]],
            gamma=float(entry["gamma"]),
        )
        out.append((report, int(entry["ref_count"])))
    return out


def write_evaluation(out_dir, summary, per_image) -> dict:
    """Persist metrics.json/.csv, per_image.json, density table, and plot."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tp", "fp", "fn", "precision", "recall", "f1"])
        writer.writerow([summary[k] for k in ("tp", "fp", "fn", "precision", "recall", "f1")])

    with open(out_dir / "per_image.json", "w") as fh:
        json.dump(per_image_payload(per_image), fh, indent=2)
        fh.write("\n")

    buckets = density_bucket_report([(rep, n) for _, rep, n in per_image])
    with open(out_dir / "density.json", "w") as fh:
        json.dump(buckets, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "density.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "count_low", "count_high", "n_images",
                         "tp", "fp", "fn", "precision", "recall", "f1"])
        for row in buckets:
            low, high = row["count_range"]
            writer.writerow([row["label"], low, "" if high is None else high,
                             row["n_images"], row["tp"], row["fp"], row["fn"],
                             row["precision"], row["recall"], row["f1"]])
    plot_path = out_dir / "density.png"
    plot_density_report(buckets, plot_path)

    return {
        "metrics": str(out_dir / "metrics.json"),
        "per_image": str(out_dir / "per_image.json"),
        "density": str(out_dir / "density.json"),
        "plot": str(plot_path),
    }


# ---------------------------------------------------------------------------
# training loop


def _checkpoint_meta(config: RunConfig, epoch, history, mean, std) -> dict:
    return {
        "model_config": config.model_config().to_dict(),
        "epoch": epoch,
        "optimizer": {
            "name": "adam",
            "learning_rate": config.learning_rate,
            "weight_decay": config.weight_decay,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
        },
        "seed": config.seed,
        "gamma": config.gamma,
        "target_map": {"alpha": config.alpha, "beta": config.beta, "c": config.c},
        "norm_mean": [float(v) for v in mean.reshape(-1)],
        "norm_std": [float(v) for v in std.reshape(-1)],
        "loss_history": history,
    }


def _batched(order, batch_size):
    for i in range(0, len(order), batch_size):
        yield order[i:i + batch_size]


def run_training(config: RunConfig) -> dict:
    """Train per `config`; writes checkpoints, a loss log, and a summary."""
    if not config.data_dir:
        raise ValueError("config.data_dir is required for training")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)

    patches = load_dataset(config.data_dir)
    empty = [p.id for p in patches if len(p.points) == 0]
    if empty:
        raise ValueError(f"training patches without annotations: {empty}")
    if config.train_fraction >= 1.0:
        train, val = list(patches), list(patches)  # monitor the training set
    else:
        train, val = split_dataset(patches, config.train_fraction, config.seed)
    mean, std = normalization_stats(train)

    torch.manual_seed(config.seed)
    model = PointLocalizer(config.model_config())
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 weight_decay=config.weight_decay)

    history = []
    best = {"f1": -1.0, "epoch": -1}
    start_epoch = 0
    last_path = out_dir / "last.pt"
    best_path = out_dir / "best.pt"
    if config.resume and last_path.exists():
        model, meta, opt_state = load_checkpoint(last_path, with_optimizer_state=True)
        if opt_state is not None:
            optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                         weight_decay=config.weight_decay)
            optimizer.load_state_dict(opt_state)
        history = list(meta["loss_history"])
        start_epoch = int(meta["epoch"]) + 1
        mean, std = _norm_from_meta(meta)
        for entry in history:
            if "val_f1" in entry and entry["val_f1"] > best["f1"]:
                best = {"f1": entry["val_f1"], "epoch": entry["epoch"]}

    with open(out_dir / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
        fh.write("\n")

    stop = False
    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng([config.seed, epoch, 1]).permutation(len(train))
        epoch_losses = []
        for chunk in _batched(order, config.batch_size):
            batch = []
            for idx in chunk:
                source = train[int(idx)]
                rng = patch_rng(config.seed, source.id, epoch)
                partner = None
                if config.cutmix and len(train) > 1:
                    partner = train[int(rng.integers(len(train)))]
                batch.append(
                    augment_patch(source, partner, rng, hflip=config.hflip,
                                  vflip=config.vflip, cutmix=config.cutmix)
                )
            images, targets, masks = patches_to_batch(
                batch, mean, std, config.alpha, config.beta, config.c
            )
            loss = train_step(model, optimizer, images, targets, masks)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch} on batch "
                    f"{[p.id for p in batch]}"
                )
            epoch_losses.append(loss)

        entry = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        eval_now = ((epoch + 1) % max(config.eval_every, 1) == 0
                    or epoch == config.epochs - 1)
        if eval_now:
            val_summary, _ = evaluate_patches(model, val, mean, std, config.gamma)
            entry["val_precision"] = val_summary["precision"]
            entry["val_recall"] = val_summary["recall"]
            entry["val_f1"] = val_summary["f1"]
            if val_summary["f1"] > best["f1"]:
                best = {"f1": val_summary["f1"], "epoch": epoch}
                save_checkpoint(best_path, model,
                                _checkpoint_meta(config, epoch, history + [entry], mean, std))
            if config.target_f1 > 0 and val_summary["f1"] >= config.target_f1:
                stop = True
        history.append(entry)
        save_checkpoint(last_path, model,
                        _checkpoint_meta(config, epoch, history, mean, std),
                        optimizer)
        with open(out_dir / "loss_log.json", "w") as fh:
            json.dump(history, fh, indent=2)
            fh.write("\n")
        if stop:
            break

    if not best_path.exists():  # no eval epoch ever ran
        save_checkpoint(best_path, model,
                        _checkpoint_meta(config, config.epochs - 1, history, mean, std))

    result = {
        "out_dir": str(out_dir),
        "epochs_run": len(history) - start_epoch,
        "best_f1": best["f1"],
        "best_epoch": best["epoch"],
        "best_checkpoint": str(best_path),
        "last_checkpoint": str(last_path),
        "loss_log": str(out_dir / "loss_log.json"),
        "n_train": len(train),
        "n_val": len(val),
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    return result


# ---------------------------------------------------------------------------
# component study


def run_ablation(config: RunConfig) -> dict:
    """Train and score the four on/off component combinations.

    Each variant trains under the same seed and split, gets evaluated from
    its best checkpoint, and writes per-image reports so every table cell
    can be recomputed from disk. Metric columns are in percent to sit next
    to the published reference numbers.
    """
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, slug, attention, upsampler, reference_f1 in ABLATION_VARIANTS:
        variant_cfg = dataclasses.replace(
            config,
            attention=attention,
            upsampler=upsampler,
            out_dir=str(root / slug),
        )
        train_result = run_training(variant_cfg)
        model, meta = load_checkpoint(train_result["best_checkpoint"])
        mean, std = _norm_from_meta(meta)

        patches = load_dataset(config.data_dir)
        if config.train_fraction >= 1.0:
            val = patches
        else:
            _, val = split_dataset(patches, config.train_fraction, config.seed)
        summary, per_image = evaluate_patches(model, val, mean, std, config.gamma)
        write_evaluation(root / slug / "eval", summary, per_image)

        rows.append({
            "config": label,
            "attention": attention,
            "upsampler": upsampler,
            "n_images": summary["n_images"],
            "tp": summary["tp"],
            "fp": summary["fp"],
            "fn": summary["fn"],
            "precision": summary["precision"] * 100.0,
            "recall": summary["recall"] * 100.0,
            "f1": summary["f1"] * 100.0,
            "reference_f1": reference_f1,
            "per_image_report": str(root / slug / "eval" / "per_image.json"),
        })

    table = {"gamma": config.gamma, "metric_units": "percent", "rows": rows}
    with open(root / "ablation.json", "w") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    with open(root / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "attention", "upsampler",
                         "f1", "recall", "precision", "reference_f1"])
        for row in rows:
            writer.writerow([row["config"], row["attention"], row["upsampler"],
                             row["f1"], row["recall"], row["precision"],
                             row["reference_f1"]])
    table["table_json"] = str(root / "ablation.json")
    table["table_csv"] = str(root / "ablation.csv")
    return table
