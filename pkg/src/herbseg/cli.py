"""Batch command-line entry points wrapping every pipeline stage.

Option values resolve in this order: explicit command-line flag, then the
TOML config file given via --config (top level or a [command] table, keys
in snake or kebab case), then a PLANTSAM_<OPTION> environment variable,
then the built-in default. Report-producing commands write a matplotlib
figure next to their delimited output.
"""

from __future__ import annotations

import csv
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from . import figures, raster
from .analytics import coverage as coverage_stats
from .analytics import crop_to_content, heatmap, write_heatmap
from .dataset import DatasetConfig, build_detection_dataset
from .evaluation import (
    aggregate,
    evaluate_pair,
    load_manifest,
    load_report_as_baseline,
    write_report,
)
from .prompting import (
    DetectorConfig,
    HeuristicDetector,
    MaskOracleDetector,
    multi_region_prompt,
    plant_to_box_ratio,
    single_box_prompt,
)
from .segmentation import (
    OnnxPromptSegmenter,
    PipelineConfig,
    RegionGrowingSegmenter,
    STRATEGIES,
    segment_image,
)

ENV_PREFIX = "PLANTSAM_"
IMAGE_PATTERNS = ("*.png", "*.jpg", "*.jpeg")


def _normalize_keys(table):
    if not isinstance(table, dict):
        return table
    return {k.replace("-", "_"): _normalize_keys(v) for k, v in table.items()}


def _load_config(path):
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return _normalize_keys(tomllib.load(fh))


def finalize(ctx: click.Context, **values) -> dict:
    """Apply the flag > config file > environment precedence."""
    cfg = ctx.obj or {}
    cmd_table = cfg.get(ctx.command.name.replace("-", "_"), {})
    params = {p.name: p for p in ctx.command.params}
    out = {}
    for name, value in values.items():
        source = ctx.get_parameter_source(name)
        if source is not None and source.name == "COMMANDLINE":
            out[name] = value
            continue
        for table in (cmd_table, cfg):
            if isinstance(table, dict) and name in table and not isinstance(table[name], dict):
                out[name] = table[name]
                break
        else:
            env = os.environ.get(ENV_PREFIX + name.upper())
            if env is not None and name in params:
                out[name] = params[name].type.convert(env, params[name], ctx)
            else:
                out[name] = value
    return out


def discover_images(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    found = {p for pattern in IMAGE_PATTERNS for p in path.glob(pattern)}
    return sorted(found)


def build_detector(name: str, image_path: Path, masks_dir, config: DetectorConfig):
    if name == "heuristic":
        return HeuristicDetector(config)
    if name == "oracle":
        if masks_dir is None:
            raise click.ClickException("--detector oracle needs --masks DIR")
        mask_path = Path(masks_dir) / f"{image_path.stem}.png"
        if not mask_path.exists():
            raise click.ClickException(f"no ground-truth mask for {image_path.name}")
        return MaskOracleDetector(raster.load_mask(mask_path), config)
    raise click.ClickException(f"unknown detector {name!r}")


def build_segmenter(name: str):
    if name == "reference":
        return RegionGrowingSegmenter()
    if name.startswith("model:"):
        return OnnxPromptSegmenter(name.split(":", 1)[1])
    raise click.ClickException(f"unknown segmenter {name!r}")


def emit_summary(as_json: bool, summary: dict, lines: list[str]) -> None:
    if as_json:
        click.echo(json.dumps(summary, indent=2))
    else:
        for line in lines:
            click.echo(line)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML file supplying defaults for any flag.")
@click.pass_context
def main(ctx, config_path):
    """Herbarium sheet segmentation toolkit."""
    ctx.obj = _load_config(config_path)


@main.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Image file or directory of sheets.")
@click.option("--output", "output_dir", required=True, type=click.Path(path_type=Path),
              help="Directory for the predicted masks.")
@click.option("--strategy", type=click.Choice(STRATEGIES), default="multi_region",
              show_default=True)
@click.option("--detector", default="heuristic", show_default=True,
              help="heuristic, or oracle (requires --masks).")
@click.option("--masks", "masks_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Ground-truth masks for the oracle detector.")
@click.option("--segmenter", default="reference", show_default=True,
              help="reference, or model:<path-to-onnx>.")
@click.option("--patch-size", type=click.Choice(["1024", "512", "256"]), default=None,
              help="Override the width-driven patch size.")
@click.option("--morph-radius", type=int, default=1, show_default=True)
@click.option("--morph-passes", type=int, default=1, show_default=True)
@click.option("--min-component-pixels", type=int, default=16, show_default=True)
@click.option("--confidence-threshold", type=float, default=0.25, show_default=True)
@click.option("--workers", type=int, default=None, help="Defaults to the core count.")
@click.option("--dump-patches", "dump_dir", type=click.Path(path_type=Path), default=None,
              help="Also write per-patch PNGs and the plan sidecar here.")
@click.option("--keep-going", is_flag=True, help="Report per-input failures and continue.")
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON run summary.")
@click.pass_context
def segment(ctx, **opts):
    """Segment sheets into plant masks ({stem}_mask.png per input)."""
    o = finalize(ctx, **opts)
    images = discover_images(Path(o["input_path"]))
    if not images:
        raise click.ClickException(f"no images found under {o['input_path']}")
    out_dir = Path(o["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    det_cfg = DetectorConfig(confidence_threshold=o["confidence_threshold"],
                             min_component_pixels=o["min_component_pixels"])
    pipe_cfg = PipelineConfig(
        strategy=o["strategy"],
        patch_size=int(o["patch_size"]) if o["patch_size"] else None,
        morph_radius=o["morph_radius"], morph_passes=o["morph_passes"],
        detector=det_cfg, workers=o["workers"])
    segmenter = build_segmenter(o["segmenter"])

    results, failures, lines = [], [], []
    for path in images:
        started = time.perf_counter()
        try:
            image = raster.load_image(path)
            detector = build_detector(o["detector"], path, o["masks_dir"], det_cfg)
            mask = segment_image(image, detector, segmenter, pipe_cfg)
            out_path = out_dir / f"{path.stem}_mask.png"
            raster.save_mask(out_path, mask)
            if o["dump_dir"] is not None:
                from . import tiling

                size = pipe_cfg.patch_size or tiling.select_patch_size(image.shape[1])
                plan = tiling.make_plan(image.shape[1], image.shape[0], size)
                tiling.dump_patches(tiling.split(image, plan), plan,
                                    o["dump_dir"], path.stem)
            elapsed = time.perf_counter() - started
            results.append({"input": str(path), "output": str(out_path),
                            "seconds": round(elapsed, 4)})
            lines.append(f"{path.name}: {elapsed:.3f}s -> {out_path.name}")
        except Exception as exc:
            failures.append({"input": str(path), "error": str(exc)})
            click.echo(f"FAILED {path.name}: {exc}", err=True)
            if not o["keep_going"]:
                raise click.ClickException(f"{path.name}: {exc}") from exc
    emit_summary(o["as_json"], {"command": "segment", "results": results,
                                "failures": failures}, lines)


@main.command("eval")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns image_id,taxon,pred_path,truth_path.")
@click.option("--output", "output_csv", required=True, type=click.Path(path_type=Path))
@click.option("--baseline", "baseline_csv", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Prior report CSV to compute deltas against.")
@click.option("--figure", "figure_path", type=click.Path(path_type=Path), default=None,
              help="Bar-chart PNG path (defaults next to the CSV).")
@click.option("--keep-going", is_flag=True, help="Skip unreadable mask pairs.")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def eval_cmd(ctx, **opts):
    """Score predicted masks against ground truth, per taxon."""
    o = finalize(ctx, **opts)
    records, failures = [], []
    for row in load_manifest(o["manifest"]):
        try:
            pred = raster.load_mask(row["pred_path"])
            truth = raster.load_mask(row["truth_path"])
            records.append(evaluate_pair(row["image_id"], row["taxon"], pred, truth))
        except Exception as exc:
            failures.append({"image_id": row["image_id"], "error": str(exc)})
            click.echo(f"FAILED {row['image_id']}: {exc}", err=True)
            if not o["keep_going"]:
                raise click.ClickException(f"{row['image_id']}: {exc}") from exc
    if not records:
        raise click.ClickException("no evaluable pairs in the manifest")
    baseline = (load_report_as_baseline(o["baseline_csv"])
                if o["baseline_csv"] else None)
    reports = aggregate(records, baseline)
    out_csv = Path(o["output_csv"])
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_report(reports, out_csv)
    figure_path = Path(o["figure_path"]) if o["figure_path"] else out_csv.with_suffix(".png")
    figures.eval_report_figure(reports, figure_path)
    lines = [f"{r.taxon}: iou {r.mean_iou:.4f} dice {r.mean_dice:.4f} (n={r.image_count})"
             for r in reports]
    emit_summary(o["as_json"], {
        "command": "eval", "report": str(out_csv), "figure": str(figure_path),
        "taxa": len(reports) - 1, "images": len(records), "failures": failures,
    }, lines + [f"report -> {out_csv}", f"figure -> {figure_path}"])


@main.command("heatmap")
@click.option("--masks", "masks_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--output", "output_prefix", required=True, type=click.Path(path_type=Path),
              help="Writes {prefix}.png, {prefix}.f32 and {prefix}_figure.png.")
@click.option("--alignment", type=click.Choice(["center", "none"]), default="center",
              show_default=True)
@click.option("--canvas", default=None, help="Fixed canvas as WIDTHxHEIGHT.")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def heatmap_cmd(ctx, **opts):
    """Aggregate masks into a foreground-frequency heatmap."""
    o = finalize(ctx, **opts)
    files = discover_images(Path(o["masks_dir"]))
    if not files:
        raise click.ClickException(f"no masks under {o['masks_dir']}")
    masks = [raster.load_mask(p) for p in files]
    canvas = None
    if o["canvas"]:
        w, h = (int(v) for v in str(o["canvas"]).lower().split("x"))
        canvas = (w, h)
    hm = heatmap(masks, canvas=canvas, alignment=o["alignment"])
    prefix = Path(o["output_prefix"])
    prefix.parent.mkdir(parents=True, exist_ok=True)
    png = prefix.with_suffix(".png")
    sidecar = prefix.with_suffix(".f32")
    write_heatmap(hm, png, sidecar)
    figure_path = prefix.parent / f"{prefix.stem}_figure.png"
    figures.heatmap_figure(hm, figure_path)
    emit_summary(o["as_json"], {
        "command": "heatmap", "masks": len(masks), "width": hm.width,
        "height": hm.height, "png": str(png), "values": str(sidecar),
        "figure": str(figure_path),
    }, [f"{len(masks)} masks -> {png} (+ {sidecar.name}, {figure_path.name})"])


@main.command("coverage")
@click.option("--masks", "masks_root", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Root directory with one subdirectory of masks per taxon.")
@click.option("--output", "output_csv", required=True, type=click.Path(path_type=Path))
@click.option("--figure", "figure_path", type=click.Path(path_type=Path), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def coverage_cmd(ctx, **opts):
    """Per-taxon plant/background coverage percentages."""
    o = finalize(ctx, **opts)
    root = Path(o["masks_root"])
    groups = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = discover_images(sub)
        if files:
            groups[sub.name] = [raster.load_mask(f) for f in files]
    if not groups:
        raise click.ClickException(f"no taxon subdirectories with masks under {root}")
    stats = coverage_stats(groups)
    out_csv = Path(o["output_csv"])
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["taxon", "n", "plant_pct", "background_pct"])
        for s in stats:
            writer.writerow([s.taxon, s.image_count,
                             f"{s.plant_pct:.2f}", f"{s.background_pct:.2f}"])
    figure_path = Path(o["figure_path"]) if o["figure_path"] else out_csv.with_suffix(".png")
    figures.coverage_figure(stats, figure_path)
    lines = [f"{s.taxon}: {s.plant_pct:.2f} / {s.background_pct:.2f} (n={s.image_count})"
             for s in stats]
    emit_summary(o["as_json"], {
        "command": "coverage", "report": str(out_csv), "figure": str(figure_path),
        "taxa": [s.taxon for s in stats],
    }, lines + [f"report -> {out_csv}"])


@main.command("make-dataset")
@click.option("--images", "images_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Segmented renderings (plant on black).")
@click.option("--output", "output_root", required=True, type=click.Path(path_type=Path))
@click.option("--ratios", default="0.75,0.20,0.05", show_default=True,
              help="train,val,test fractions summing to 1.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--patch-size", type=click.Choice(["1024", "512", "256"]), default=None)
@click.option("--nonblack-threshold", type=int, default=0, show_default=True)
@click.option("--min-component-pixels", type=int, default=16, show_default=True)
@click.option("--keep-negatives/--drop-negatives", default=True, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def make_dataset(ctx, **opts):
    """Build a detection-training dataset from segmented renderings."""
    o = finalize(ctx, **opts)
    images = [(p.stem, p) for p in discover_images(Path(o["images_dir"]))]
    if not images:
        raise click.ClickException(f"no images under {o['images_dir']}")
    ratios = tuple(float(v) for v in str(o["ratios"]).split(","))
    cfg = DatasetConfig(
        nonblack_threshold=o["nonblack_threshold"],
        min_component_pixels=o["min_component_pixels"],
        keep_negatives=o["keep_negatives"],
        patch_size=int(o["patch_size"]) if o["patch_size"] else None,
        ratios=ratios, seed=o["seed"])
    manifest, records = build_detection_dataset(images, o["output_root"], cfg)
    counts = {"train": len(manifest.train), "val": len(manifest.val),
              "test": len(manifest.test)}
    boxes = sum(len(r.boxes) for r in records)
    emit_summary(o["as_json"], {
        "command": "make-dataset", "root": str(o["output_root"]),
        "patches": len(records), "boxes": boxes, "splits": counts,
        "seed": o["seed"],
    }, [f"{len(records)} patches, {boxes} boxes -> {o['output_root']}",
        f"splits: {counts['train']}/{counts['val']}/{counts['test']}"])


@main.command("crop")
@click.option("--images", "images_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--masks", "masks_path", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Mask file or directory with {stem}.png per image.")
@click.option("--output", "output_dir", required=True, type=click.Path(path_type=Path))
@click.option("--margin", type=int, default=0, show_default=True)
@click.option("--keep-background", is_flag=True,
              help="Keep original pixels outside the mask instead of zeroing.")
@click.option("--keep-going", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def crop(ctx, **opts):
    """Crop sheets to their segmented plant content."""
    o = finalize(ctx, **opts)
    images = discover_images(Path(o["images_path"]))
    masks_path = Path(o["masks_path"])
    out_dir = Path(o["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    results, failures, lines = [], [], []
    for path in images:
        try:
            mask_file = masks_path if masks_path.is_file() else masks_path / f"{path.stem}.png"
            image = raster.load_image(path)
            mask = raster.load_mask(mask_file)
            cimg, cmask, box = crop_to_content(
                image, mask, margin=o["margin"],
                zero_background=not o["keep_background"])
            img_out = out_dir / f"{path.stem}_cropped.png"
            mask_out = out_dir / f"{path.stem}_cropped_mask.png"
            raster.save_image(img_out, cimg)
            raster.save_mask(mask_out, cmask)
            results.append({"input": str(path), "output": str(img_out),
                            "box": [box.x_min, box.y_min, box.x_max, box.y_max]})
            lines.append(f"{path.name}: ({box.x_min},{box.y_min})-({box.x_max},{box.y_max})"
                         f" -> {img_out.name}")
        except Exception as exc:
            failures.append({"input": str(path), "error": str(exc)})
            click.echo(f"FAILED {path.name}: {exc}", err=True)
            if not o["keep_going"]:
                raise click.ClickException(f"{path.name}: {exc}") from exc
    emit_summary(o["as_json"], {"command": "crop", "results": results,
                                "failures": failures}, lines)


@main.command("ratio-study")
@click.option("--masks", "masks_dir", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Ground-truth masks; boxes are derived from their components.")
@click.option("--output", "output_csv", required=True, type=click.Path(path_type=Path))
@click.option("--figure", "figure_path", type=click.Path(path_type=Path), default=None)
@click.option("--min-component-pixels", type=int, default=16, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def ratio_study(ctx, **opts):
    """Compare plant-to-box-area ratios of the two prompt strategies."""
    o = finalize(ctx, **opts)
    files = discover_images(Path(o["masks_dir"]))
    if not files:
        raise click.ClickException(f"no masks under {o['masks_dir']}")
    det_cfg = DetectorConfig(min_component_pixels=o["min_component_pixels"])
    rows = []
    pooled_multi = []
    for path in files:
        mask = raster.load_mask(path)
        if not mask.any():
            continue
        single_boxes = single_box_prompt(mask).boxes
        multi_boxes = multi_region_prompt(mask, det_cfg).boxes
        single_ratio = plant_to_box_ratio(mask, single_boxes)
        multi_ratio = plant_to_box_ratio(mask, multi_boxes)
        pooled_multi.extend(plant_to_box_ratio(mask, [b]) for b in multi_boxes)
        rows.append({"image_id": path.stem, "components": len(multi_boxes),
                     "single_box": single_ratio, "multi_region": multi_ratio})
    if not rows:
        raise click.ClickException("all masks were empty")
    single_mean = float(np.mean([r["single_box"] for r in rows]))
    multi_mean = float(np.mean([r["multi_region"] for r in rows]))
    pooled_mean = float(np.mean(pooled_multi))

    out_csv = Path(o["output_csv"])
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "components", "single_box", "multi_region"])
        for r in rows:
            writer.writerow([r["image_id"], r["components"],
                             f"{r['single_box']:.4f}", f"{r['multi_region']:.4f}"])
    figure_path = Path(o["figure_path"]) if o["figure_path"] else out_csv.with_suffix(".png")
    figures.ratio_figure(single_mean, multi_mean, figure_path)
    lines = [
        f"single-box mean ratio: {single_mean * 100:.2f}%",
        f"multi-region mean ratio: {multi_mean * 100:.2f}%",
        f"multi-region pooled over boxes: {pooled_mean * 100:.2f}%",
        f"report -> {out_csv}",
    ]
    emit_summary(o["as_json"], {
        "command": "ratio-study", "images": len(rows),
        "single_box_mean": single_mean, "multi_region_mean": multi_mean,
        "multi_region_pooled": pooled_mean,
        "report": str(out_csv), "figure": str(figure_path),
    }, lines)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8077, show_default=True)
@click.option("--data-dir", required=True, type=click.Path(path_type=Path))
@click.option("--workers", type=int, default=None, help="Pipeline worker threads.")
@click.option("--ui-dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Serve a built browser UI from this directory.")
@click.pass_context
def serve(ctx, **opts):
    """Run the refinement service (jobs + interactive sessions)."""
    o = finalize(ctx, **opts)
    import uvicorn

    from .service import create_app

    app = create_app(o["data_dir"], workers=o["workers"], ui_dir=o["ui_dir"])
    uvicorn.run(app, host=o["host"], port=o["port"])


if __name__ == "__main__":
    main()
