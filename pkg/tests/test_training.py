import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from satpoint import (PointSet, SynthConfig, center_mask, fidt_map,
                      save_patch, summarize, synth_dataset)
from satpoint.config import RunConfig, load_config
from satpoint.model import ModelConfig, PointLocalizer
from satpoint.training import (ABLATION_VARIANTS, evaluate_patches,
                               load_checkpoint, normalization_stats,
                               patches_to_batch, per_image_payload,
                               predict_map, reports_from_payload,
                               run_ablation, run_training, save_checkpoint,
                               train_step, write_evaluation)

SMALL = dict(base_channels=8, hourglass_levels=2, stages=1, attention=True,
             upsampler="deformable")


def small_model(seed=0, **kwargs):
    torch.manual_seed(seed)
    params = dict(SMALL)
    params.update(kwargs)
    return PointLocalizer(ModelConfig(**params))


def tiny_dataset(count=6, seed=9, size=32):
    config = SynthConfig(height=size, width=size, n_points=(3, 7),
                         min_separation=3.0, seed=seed)
    return synth_dataset(config, count)


def tiny_run_config(data_dir, out_dir, **kwargs):
    base = dict(data_dir=str(data_dir), out_dir=str(out_dir), epochs=2,
                batch_size=4, learning_rate=1e-3, seed=0, train_fraction=1.0,
                eval_every=1, base_channels=8, hourglass_levels=2, stages=1,
                hflip=True, vflip=True, cutmix=True)
    base.update(kwargs)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("patches")
    for patch in tiny_dataset():
        save_patch(patch, path)
    return path


class TestBatching:
    def test_normalization_stats(self):
        patches = tiny_dataset(count=3)
        mean, std = normalization_stats(patches)
        assert mean.shape == (3, 1, 1) and std.shape == (3, 1, 1)
        stacked = np.stack([p.image for p in patches])
        assert mean.reshape(-1) == pytest.approx(stacked.mean(axis=(0, 2, 3)),
                                                 abs=1e-6)
        assert (std > 0).all()

    def test_std_floor_on_constant_images(self):
        patches = tiny_dataset(count=2)
        for p in patches:
            p.image[:] = 0.5
        _, std = normalization_stats(patches)
        assert std.reshape(-1).tolist() == pytest.approx([1e-6] * 3)

    def test_patches_to_batch_contents(self):
        patches = tiny_dataset(count=2)
        mean, std = normalization_stats(patches)
        images, targets, masks = patches_to_batch(patches, mean, std,
                                                  0.02, 0.75, 1.0)
        assert images.shape == (2, 3, 32, 32) and images.dtype == torch.float32
        assert targets.shape == (2, 1, 32, 32)
        assert masks.shape == (2, 1, 32, 32) and masks.dtype == torch.bool
        expected = (patches[0].image - mean) / std
        assert torch.allclose(images[0], torch.from_numpy(expected), atol=1e-6)
        assert np.array_equal(targets[0, 0].numpy(),
                              fidt_map(patches[0].points).values)
        assert np.array_equal(masks[1, 0].numpy(), center_mask(patches[1].points))

    def test_train_step_updates_parameters(self):
        patches = tiny_dataset(count=2)
        mean, std = normalization_stats(patches)
        batch = patches_to_batch(patches, mean, std, 0.02, 0.75, 1.0)
        model = small_model()
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        before = [p.detach().clone() for p in model.parameters()]
        loss = train_step(model, optimizer, *batch)
        assert np.isfinite(loss) and loss > 0
        changed = any(not torch.equal(b, p.detach())
                      for b, p in zip(before, model.parameters()))
        assert changed


class TestCheckpoints:
    def test_round_trip_restores_weights(self, tmp_path):
        model = small_model(seed=3)
        meta = {"model_config": model.config.to_dict(), "epoch": 4,
                "norm_mean": [0.4, 0.4, 0.4], "norm_std": [0.2, 0.2, 0.2]}
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, meta)
        back, loaded_meta = load_checkpoint(path)
        assert loaded_meta["epoch"] == 4
        for a, b in zip(model.state_dict().values(), back.state_dict().values()):
            assert torch.equal(a, b)

    def test_optimizer_state_round_trip(self, tmp_path):
        patches = tiny_dataset(count=2)
        mean, std = normalization_stats(patches)
        batch = patches_to_batch(patches, mean, std, 0.02, 0.75, 1.0)
        model = small_model()
        optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
        train_step(model, optimizer, *batch)
        meta = {"model_config": model.config.to_dict(), "epoch": 0}
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, model, meta, optimizer)
        _, _, opt_state = load_checkpoint(path, with_optimizer_state=True)
        assert opt_state is not None
        assert opt_state["param_groups"][0]["lr"] == pytest.approx(1e-3)

    def test_missing_files_raise(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="archive"):
            load_checkpoint(tmp_path / "nope.pt")
        model = small_model()
        path = tmp_path / "half.pt"
        save_checkpoint(path, model, {"model_config": model.config.to_dict()})
        path.with_suffix(".json").unlink()
        with pytest.raises(FileNotFoundError, match="sidecar"):
            load_checkpoint(path)


class TestPrediction:
    def test_predict_map_shape_and_range(self):
        model = small_model()
        patch = tiny_dataset(count=1)[0]
        mean, std = normalization_stats([patch])
        out = predict_map(model, patch.image, mean, std)
        assert out.shape == (32, 32)
        assert out.dtype == np.float32
        assert out.min() > 0.0 and out.max() < 1.0

    def test_predict_map_pads_odd_sizes(self):
        model = small_model()
        rng = np.random.default_rng(0)
        image = rng.uniform(0, 1, size=(3, 30, 37)).astype(np.float32)
        mean = np.full((3, 1, 1), 0.5, dtype=np.float32)
        std = np.full((3, 1, 1), 0.25, dtype=np.float32)
        out = predict_map(model, image, mean, std)
        assert out.shape == (30, 37)

    def test_evaluate_patches_structure(self):
        model = small_model()
        patches = tiny_dataset(count=3)
        mean, std = normalization_stats(patches)
        summary, per_image = evaluate_patches(model, patches, mean, std,
                                              gamma=1.0)
        assert summary["n_images"] == 3
        assert summary["gamma"] == 1.0
        assert set(summary) >= {"tp", "fp", "fn", "precision", "recall", "f1"}
        assert [pid for pid, _, _ in per_image] == [p.id for p in patches]
        for _, report, ref_count in per_image:
            assert report.tp + report.fn == ref_count

    def test_per_image_payload_round_trip(self):
        model = small_model()
        patches = tiny_dataset(count=3)
        mean, std = normalization_stats(patches)
        summary, per_image = evaluate_patches(model, patches, mean, std)
        entries = json.loads(json.dumps(per_image_payload(per_image)))
        rebuilt = reports_from_payload(entries)
        recomputed = summarize(rep for rep, _ in rebuilt)
        for key in ("tp", "fp", "fn", "precision", "recall", "f1"):
            assert recomputed[key] == summary[key]

    def test_write_evaluation_artifacts(self, tmp_path):
        model = small_model()
        patches = tiny_dataset(count=2)
        mean, std = normalization_stats(patches)
        summary, per_image = evaluate_patches(model, patches, mean, std)
        paths = write_evaluation(tmp_path / "eval", summary, per_image)
        for key in ("metrics", "per_image", "density", "plot"):
            assert (tmp_path / "eval").exists()
            assert json.loads(json.dumps(paths[key]))  # path strings
        persisted = json.loads((tmp_path / "eval" / "metrics.json").read_text())
        assert persisted["f1"] == summary["f1"]
        density_csv = (tmp_path / "eval" / "density.csv").read_text().splitlines()
        assert len(density_csv) == 7  # header + six buckets
        assert (tmp_path / "eval" / "density.png").stat().st_size > 0


class TestRunTraining:
    def test_requires_data_dir(self, tmp_path):
        with pytest.raises(ValueError, match="data_dir"):
            run_training(RunConfig(out_dir=str(tmp_path)))

    def test_smoke_run_writes_artifacts(self, dataset_dir, tmp_path):
        config = tiny_run_config(dataset_dir, tmp_path / "run")
        result = run_training(config)
        out = tmp_path / "run"
        for name in ("config.json", "loss_log.json", "summary.json",
                     "best.pt", "best.json", "last.pt", "last.json"):
            assert (out / name).exists(), name
        history = json.loads((out / "loss_log.json").read_text())
        assert [h["epoch"] for h in history] == [0, 1]
        assert all("train_loss" in h and "val_f1" in h for h in history)
        assert result["epochs_run"] == 2
        assert result["n_train"] == 6 and result["n_val"] == 6
        assert 0.0 <= result["best_f1"] <= 1.0

    def test_fixed_seed_reproduces_loss_log(self, dataset_dir, tmp_path):
        config_a = tiny_run_config(dataset_dir, tmp_path / "a")
        config_b = tiny_run_config(dataset_dir, tmp_path / "b")
        run_training(config_a)
        run_training(config_b)
        log_a = (tmp_path / "a" / "loss_log.json").read_text()
        log_b = (tmp_path / "b" / "loss_log.json").read_text()
        assert log_a == log_b

    def test_different_seed_changes_losses(self, dataset_dir, tmp_path):
        run_training(tiny_run_config(dataset_dir, tmp_path / "a", epochs=1))
        run_training(tiny_run_config(dataset_dir, tmp_path / "b", epochs=1,
                                     seed=1))
        loss_a = json.loads((tmp_path / "a" / "loss_log.json").read_text())
        loss_b = json.loads((tmp_path / "b" / "loss_log.json").read_text())
        assert loss_a[0]["train_loss"] != loss_b[0]["train_loss"]

    def test_resume_matches_uninterrupted_run(self, dataset_dir, tmp_path):
        full = tiny_run_config(dataset_dir, tmp_path / "full")
        run_training(full)

        split = tiny_run_config(dataset_dir, tmp_path / "split", epochs=1)
        run_training(split)
        resumed = dataclasses.replace(split, epochs=2, resume=True)
        run_training(resumed)

        log_full = json.loads((tmp_path / "full" / "loss_log.json").read_text())
        log_split = json.loads((tmp_path / "split" / "loss_log.json").read_text())
        assert log_split == log_full

    def test_rejects_patches_without_points(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        for patch in tiny_dataset(count=2):
            save_patch(patch, data)
        # hand-write an annotation-free patch
        import PIL.Image
        PIL.Image.new("RGB", (32, 32), (60, 60, 60)).save(data / "blank.png")
        (data / "blank.json").write_text('{"points": []}\n')
        config = tiny_run_config(data, tmp_path / "run")
        with pytest.raises(ValueError, match="blank"):
            run_training(config)

    def test_validation_split_is_held_out(self, dataset_dir, tmp_path):
        config = tiny_run_config(dataset_dir, tmp_path / "run", epochs=1,
                                 train_fraction=0.5)
        result = run_training(config)
        assert result["n_train"] == 3 and result["n_val"] == 3


class TestAblation:
    def test_four_variant_table(self, dataset_dir, tmp_path):
        config = tiny_run_config(dataset_dir, tmp_path / "study", epochs=1,
                                 base_channels=6)
        table = run_ablation(config)
        rows = table["rows"]
        assert [row["config"] for row in rows] == [
            "baseline", "+attention", "+upsampler", "full"]
        assert [row["reference_f1"] for row in rows] == [
            64.42, 65.32, 65.52, 66.12]
        assert table["metric_units"] == "percent"
        assert (tmp_path / "study" / "ablation.json").exists()
        assert (tmp_path / "study" / "ablation.csv").exists()

        for row, (label, slug, attention, upsampler, _) in zip(
                rows, ABLATION_VARIANTS):
            assert row["attention"] == attention
            assert row["upsampler"] == upsampler
            assert 0.0 <= row["f1"] <= 100.0
            # every cell must be recomputable from the persisted reports
            per_image = json.loads(Path(row["per_image_report"]).read_text())
            rebuilt = summarize(rep for rep, _ in reports_from_payload(per_image))
            assert rebuilt["f1"] * 100.0 == pytest.approx(row["f1"], abs=1e-9)
            assert rebuilt["precision"] * 100.0 == pytest.approx(
                row["precision"], abs=1e-9)
