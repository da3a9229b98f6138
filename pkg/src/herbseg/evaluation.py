"""Overlap metrics and per-taxon delta reporting.

Deltas are raw score differences expressed in percentage points
(new - baseline, times 100), printed with an explicit sign and two
decimals; means are printed with four decimals.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import ensure_mask

log = logging.getLogger(__name__)

OVERALL = "ALL"


def _check_pair(pred, truth):
    ensure_mask(pred)
    ensure_mask(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    _check_pair(pred, truth)
    inter = int(np.logical_and(pred, truth).sum())
    union = int(np.logical_or(pred, truth).sum())
    if union == 0:
        return 1.0
    return inter / union


def dice(pred: np.ndarray, truth: np.ndarray) -> float:
    """Twice the intersection over the summed areas; both empty -> 1.0."""
    _check_pair(pred, truth)
    inter = int(np.logical_and(pred, truth).sum())
    total = int(pred.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2 * inter / total


@dataclass(frozen=True)
class EvaluationRecord:
    image_id: str
    taxon: str
    iou: float
    dice: float
    predicted_foreground: int
    truth_foreground: int


def evaluate_pair(image_id: str, taxon: str, pred, truth) -> EvaluationRecord:
    return EvaluationRecord(
        image_id=image_id,
        taxon=taxon,
        iou=iou(pred, truth),
        dice=dice(pred, truth),
        predicted_foreground=int(pred.sum()),
        truth_foreground=int(truth.sum()),
    )


@dataclass(frozen=True)
class TaxonReport:
    taxon: str
    mean_iou: float
    mean_dice: float
    image_count: int
    delta_iou: float | None = None  # percentage points vs. baseline
    delta_dice: float | None = None


def aggregate(records: list[EvaluationRecord],
              baseline: dict[str, tuple[float, float]] | None = None) -> list[TaxonReport]:
    """Per-taxon means plus an ALL row pooled over every record.

    ``baseline`` maps taxon -> (mean_iou, mean_dice) from a prior run;
    taxa present only in the baseline are ignored with a warning.
    """
    if not records:
        raise ValueError("nothing to aggregate")
    by_taxon: dict[str, list[EvaluationRecord]] = {}
    for rec in records:
        by_taxon.setdefault(rec.taxon, []).append(rec)

    baseline = dict(baseline or {})
    reports = []
    for taxon in sorted(by_taxon):
        group = by_taxon[taxon]
        reports.append(_report(taxon, group, baseline.get(taxon)))
    reports.append(_report(OVERALL, records, baseline.get(OVERALL)))

    for stale in sorted(set(baseline) - {r.taxon for r in reports}):
        log.warning("baseline taxon %r not present in this evaluation; ignored", stale)
    return reports


def _report(taxon, group, base) -> TaxonReport:
    mean_iou = float(np.mean([r.iou for r in group]))
    mean_dice = float(np.mean([r.dice for r in group]))
    return TaxonReport(
        taxon=taxon,
        mean_iou=mean_iou,
        mean_dice=mean_dice,
        image_count=len(group),
        delta_iou=delta_points(base[0], mean_iou) if base else None,
        delta_dice=delta_points(base[1], mean_dice) if base else None,
    )


def evaluate_set(pairs, baseline=None) -> list[TaxonReport]:
    """Aggregate (pred, truth, taxon) triples; see ``aggregate``."""
    records = [evaluate_pair(str(i), taxon, pred, truth)
               for i, (pred, truth, taxon) in enumerate(pairs)]
    return aggregate(records, baseline)


def delta_points(baseline_mean: float, new_mean: float) -> float:
    """Score difference in percentage points."""
    return (new_mean - baseline_mean) * 100.0


def format_mean(value: float) -> str:
    return f"{value:.4f}"


def format_delta(value: float | None) -> str:
    return "" if value is None else f"{value:+.2f}"


REPORT_FIELDS = ("taxon", "n", "mean_iou", "mean_dice", "delta_iou", "delta_dice")


def write_report(reports: list[TaxonReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_FIELDS)
        for r in reports:
            writer.writerow([r.taxon, r.image_count,
                             format_mean(r.mean_iou), format_mean(r.mean_dice),
                             format_delta(r.delta_iou), format_delta(r.delta_dice)])


def load_report_as_baseline(path) -> dict[str, tuple[float, float]]:
    """Read a previously written report CSV into a baseline mapping."""
    baseline = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            baseline[row["taxon"]] = (float(row["mean_iou"]), float(row["mean_dice"]))
    return baseline


def load_manifest(path) -> list[dict]:
    """Evaluation manifest CSV: image_id,taxon,pred_path,truth_path."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"image_id", "taxon", "pred_path", "truth_path"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"manifest {path} lacks columns: {sorted(missing)}")
        base = Path(path).parent
        for row in reader:
            row["pred_path"] = str((base / row["pred_path"]))
            row["truth_path"] = str((base / row["truth_path"]))
            rows.append(row)
    return rows
