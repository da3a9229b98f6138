import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from herbseg import raster
from herbseg.cli import main

import sheetgen


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def sheets_dir(tmp_path):
    """Three sheets plus their ground-truth masks."""
    images = tmp_path / "sheets"
    masks = tmp_path / "truth"
    images.mkdir()
    masks.mkdir()
    for i in range(3):
        image, stencil = sheetgen.make_sheet(280, 300, n_components=3, seed=40 + i)
        raster.save_image(images / f"sheet{i}.png", image)
        raster.save_mask(masks / f"sheet{i}.png", stencil)
    return images, masks


def file_hashes(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestSegmentCommand:
    def test_oracle_reference_run(self, runner, sheets_dir, tmp_path):
        images, masks = sheets_dir
        out = tmp_path / "out"
        result = runner.invoke(main, [
            "segment", "--input", str(images), "--output", str(out),
            "--detector", "oracle", "--masks", str(masks),
            "--segmenter", "reference", "--json"])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert len(summary["results"]) == 3
        assert all("seconds" in r for r in summary["results"])
        for i in range(3):
            assert (out / f"sheet{i}_mask.png").exists()

    def test_byte_identical_reruns(self, runner, sheets_dir, tmp_path):
        images, masks = sheets_dir
        args = ["segment", "--input", str(images), "--detector", "oracle",
                "--masks", str(masks), "--workers", "2"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert runner.invoke(main, args + ["--output", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--output", str(b)]).exit_code == 0
        assert file_hashes(a) == file_hashes(b)

    def test_failure_aborts_without_keep_going(self, runner, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        (images / "bad.png").write_bytes(b"not an image")
        result = runner.invoke(main, [
            "segment", "--input", str(images), "--output", str(tmp_path / "o")])
        assert result.exit_code != 0
        assert "bad.png" in result.output

    def test_keep_going_continues_batch(self, runner, sheets_dir, tmp_path):
        images, masks = sheets_dir
        (images / "aaa_broken.png").write_bytes(b"junk")
        out = tmp_path / "out"
        result = runner.invoke(main, [
            "segment", "--input", str(images), "--output", str(out),
            "--detector", "oracle", "--masks", str(masks),
            "--keep-going", "--json"])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.stdout)
        assert len(summary["failures"]) == 1
        assert len(summary["results"]) == 3
        assert "aaa_broken.png" in result.stderr

    def test_dump_patches_sidecar(self, runner, sheets_dir, tmp_path):
        images, masks = sheets_dir
        dump = tmp_path / "patches"
        result = runner.invoke(main, [
            "segment", "--input", str(images / "sheet0.png"),
            "--output", str(tmp_path / "o"),
            "--detector", "oracle", "--masks", str(masks),
            "--dump-patches", str(dump)])
        assert result.exit_code == 0, result.output
        assert (dump / "sheet0.plan.json").exists()
        assert (dump / "sheet0_r0_c0.png").exists()


class TestEvalCommand:
    @pytest.fixture
    def manifest(self, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        rows = []
        for i, taxon in enumerate(["Rosa", "Rosa", "Ulex"]):
            _, stencil = sheetgen.make_sheet(120, 100, n_components=2, seed=i)
            raster.save_mask(masks / f"m{i}.png", stencil)
            rows.append((f"img{i}", taxon, f"masks/m{i}.png", f"masks/m{i}.png"))
        path = tmp_path / "manifest.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "taxon", "pred_path", "truth_path"])
            writer.writerows(rows)
        return path

    def test_identical_masks_score_one(self, runner, manifest, tmp_path):
        out = tmp_path / "report.csv"
        result = runner.invoke(main, [
            "eval", "--manifest", str(manifest), "--output", str(out), "--json"])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(out)))
        assert {r["taxon"] for r in rows} == {"Rosa", "Ulex", "ALL"}
        assert all(r["mean_iou"] == "1.0000" for r in rows)
        assert out.with_suffix(".png").exists()  # figure alongside the CSV

    def test_baseline_deltas_in_report(self, runner, manifest, tmp_path):
        base = tmp_path / "base.csv"
        base.write_text("taxon,n,mean_iou,mean_dice,delta_iou,delta_dice\n"
                        "Rosa,2,0.9000,0.9500,,\n"
                        "ALL,3,0.9000,0.9500,,\n")
        out = tmp_path / "report.csv"
        result = runner.invoke(main, [
            "eval", "--manifest", str(manifest), "--output", str(out),
            "--baseline", str(base)])
        assert result.exit_code == 0, result.output
        rows = {r["taxon"]: r for r in csv.DictReader(open(out))}
        assert rows["Rosa"]["delta_iou"] == "+10.00"
        assert rows["Ulex"]["delta_iou"] == ""


class TestHeatmapCommand:
    def test_outputs_and_sidecar(self, runner, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        m = np.zeros((40, 50), dtype=bool)
        m[10:30, 15:35] = True
        for i in range(3):
            raster.save_mask(masks / f"m{i}.png", m)
        prefix = tmp_path / "heat" / "rosa"
        result = runner.invoke(main, [
            "heatmap", "--masks", str(masks), "--output", str(prefix), "--json"])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        values = np.frombuffer((prefix.parent / "rosa.f32").read_bytes(), dtype="<f4")
        assert values.reshape(40, 50)[20, 20] == 1.0
        assert values.reshape(40, 50)[0, 0] == 0.0
        assert (prefix.parent / "rosa.png").exists()
        assert (prefix.parent / "rosa_figure.png").exists()
        assert summary["masks"] == 3

    def test_fixed_canvas_flag(self, runner, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        raster.save_mask(masks / "m.png", np.ones((10, 10), dtype=bool))
        prefix = tmp_path / "h"
        result = runner.invoke(main, [
            "heatmap", "--masks", str(masks), "--output", str(prefix),
            "--canvas", "24x16", "--json"])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert (summary["width"], summary["height"]) == (24, 16)


class TestCoverageCommand:
    def test_sorted_two_decimal_report(self, runner, tmp_path):
        root = tmp_path / "taxa"
        for name, fill in (("Dense", 0.5), ("Sparse", 0.125)):
            d = root / name
            d.mkdir(parents=True)
            m = np.zeros((8, 8), dtype=bool)
            m.ravel()[:int(64 * fill)] = True
            raster.save_mask(d / "m.png", m)
        out = tmp_path / "cov.csv"
        result = runner.invoke(main, [
            "coverage", "--masks", str(root), "--output", str(out)])
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(open(out)))
        assert [r["taxon"] for r in rows] == ["Dense", "Sparse"]
        assert rows[0]["plant_pct"] == "50.00"
        assert rows[1]["plant_pct"] == "12.50"
        assert out.with_suffix(".png").exists()


class TestMakeDatasetCommand:
    def test_build_and_determinism(self, runner, tmp_path):
        images = tmp_path / "segmented"
        images.mkdir()
        for i in range(3):
            image, _ = sheetgen.segmented_rendering(300, 280, n_components=2, seed=i)
            raster.save_image(images / f"s{i}.png", image)
        args = ["make-dataset", "--images", str(images), "--seed", "3",
                "--patch-size", "256"]
        a, b = tmp_path / "a", tmp_path / "b"
        ra = runner.invoke(main, args + ["--output", str(a), "--json"])
        assert ra.exit_code == 0, ra.output
        rb = runner.invoke(main, args + ["--output", str(b)])
        assert rb.exit_code == 0, rb.output
        assert file_hashes(a) == file_hashes(b)
        summary = json.loads(ra.output)
        assert summary["splits"]["train"] >= summary["splits"]["test"]
        assert (a / "splits.json").exists()
        labels = list((a / "labels").rglob("*.txt"))
        assert labels and any(p.read_text() for p in labels)


class TestCropCommand:
    def test_crop_pair(self, runner, tmp_path):
        image, stencil = sheetgen.make_sheet(150, 120, n_components=1, seed=2)
        raster.save_image(tmp_path / "x.png", image)
        raster.save_mask(tmp_path / "x_mask.png", stencil)
        out = tmp_path / "out"
        result = runner.invoke(main, [
            "crop", "--images", str(tmp_path / "x.png"),
            "--masks", str(tmp_path / "x_mask.png"),
            "--output", str(out), "--margin", "2", "--json"])
        assert result.exit_code == 0, result.output
        cropped = raster.load_image(out / "x_cropped.png")
        cmask = raster.load_mask(out / "x_cropped_mask.png")
        assert cropped.shape[:2] == cmask.shape
        assert cropped.shape[0] < 120 and cropped.shape[1] < 150
        assert (cropped[~cmask] == 0).all()


class TestRatioStudyCommand:
    def test_multi_region_wins_on_split_fixtures(self, runner, tmp_path):
        masks = tmp_path / "masks"
        masks.mkdir()
        for i in range(5):
            _, stencil = sheetgen.make_sheet(140, 140, n_components=3, seed=60 + i)
            raster.save_mask(masks / f"m{i}.png", stencil)
        out = tmp_path / "ratios.csv"
        result = runner.invoke(main, [
            "ratio-study", "--masks", str(masks), "--output", str(out),
            "--min-component-pixels", "4", "--json"])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert summary["multi_region_mean"] >= summary["single_box_mean"]
        plain = runner.invoke(main, [
            "ratio-study", "--masks", str(masks), "--output", str(out),
            "--min-component-pixels", "4"])
        assert "single-box mean ratio:" in plain.output
        assert "multi-region mean ratio:" in plain.output
        # two-decimal percentages
        import re

        assert re.search(r"single-box mean ratio: \d+\.\d\d%", plain.output)


class TestConfigPrecedence:
    def make_inputs(self, tmp_path):
        images = tmp_path / "segmented"
        images.mkdir()
        for i in range(2):
            image, _ = sheetgen.segmented_rendering(300, 280, n_components=2, seed=i)
            raster.save_image(images / f"s{i}.png", image)
        return images

    def seed_of(self, root: Path) -> int:
        return json.loads((root / "splits.json").read_text())["seed"]

    def test_env_used_when_nothing_else_set(self, runner, tmp_path, monkeypatch):
        images = self.make_inputs(tmp_path)
        monkeypatch.setenv("PLANTSAM_SEED", "7")
        out = tmp_path / "out"
        result = runner.invoke(main, ["make-dataset", "--images", str(images),
                                      "--output", str(out), "--patch-size", "256"])
        assert result.exit_code == 0, result.output
        assert self.seed_of(out) == 7

    def test_config_file_beats_env(self, runner, tmp_path, monkeypatch):
        images = self.make_inputs(tmp_path)
        monkeypatch.setenv("PLANTSAM_SEED", "7")
        cfg = tmp_path / "conf.toml"
        cfg.write_text("[make-dataset]\nseed = 5\n")
        out = tmp_path / "out"
        result = runner.invoke(main, ["--config", str(cfg),
                                      "make-dataset", "--images", str(images),
                                      "--output", str(out), "--patch-size", "256"])
        assert result.exit_code == 0, result.output
        assert self.seed_of(out) == 5

    def test_cli_flag_beats_config_and_env(self, runner, tmp_path, monkeypatch):
        images = self.make_inputs(tmp_path)
        monkeypatch.setenv("PLANTSAM_SEED", "7")
        cfg = tmp_path / "conf.toml"
        cfg.write_text("[make-dataset]\nseed = 5\n")
        out = tmp_path / "out"
        result = runner.invoke(main, ["--config", str(cfg),
                                      "make-dataset", "--images", str(images),
                                      "--output", str(out), "--patch-size", "256",
                                      "--seed", "9"])
        assert result.exit_code == 0, result.output
        assert self.seed_of(out) == 9


class TestHelp:
    @pytest.mark.parametrize("command", [
        [], ["segment"], ["eval"], ["heatmap"], ["coverage"],
        ["make-dataset"], ["crop"], ["ratio-study"], ["serve"],
    ])
    def test_every_command_has_help(self, runner, command):
        result = runner.invoke(main, command + ["--help"])
        assert result.exit_code == 0
        assert "Usage" in result.output
