# app/repositories/report_repository.py
"""Arquivos de saída de texto/CSV: relatório de avaliação, curvas PR, seleções, perdas, comparação e manifesto."""
import csv
import io
import logging
from pathlib import Path
from typing import Iterable, List, Sequence

from app.models.manifest import RunManifest
from app.models.region import Region
from app.models.report import ComparisonReport, EvalReport, GradcheckResult
from app.repositories.storage import PathLike, write_atomic

logger = logging.getLogger(__name__)

REPORT_FILE = "report.txt"
PR_CURVES_FILE = "pr_curves.csv"
SELECTIONS_FILE = "selections.csv"
PREDICTIONS_FILE = "predictions.csv"
TOP_FILE = "top_predictions.csv"
CUE_OVERLAP_FILE = "cue_overlap.csv"
MANIFEST_FILE = "manifest.json"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _regions(regions: Sequence[Region]) -> str:
    return ";".join(" ".join(repr(float(v)) for v in r.coords) for r in regions)


def write_eval_report(out_dir: PathLike, report: EvalReport) -> List[Path]:
    out_dir = Path(out_dir)
    written = []

    lines = [
        f"mode: {report.mode}",
        f"level: {report.level}",
        f"ap_variant: {report.ap_variant}",
        f"mean_ap: {_fmt(report.mean_ap)}",
    ]
    for result in report.classes:
        ap = _fmt(result.ap) if result.ap is not None else "undefined"
        lines.append(f"ap[{result.class_name}]: {ap} (positives {result.positives})")
    if report.cue_overlap is not None:
        summary = report.cue_overlap
        lines.append(f"cue_overlap_threshold: {_fmt(summary.threshold)}")
        lines.append(f"cue_overlap_hits: {summary.hits}/{summary.evaluated}")
        lines.append(f"cue_overlap_fraction: {_fmt(summary.fraction)}")
    written.append(write_atomic(out_dir / REPORT_FILE, "\n".join(lines) + "\n"))

    curve_rows = [(r.class_name, _fmt(p.threshold), _fmt(p.precision), _fmt(p.recall))
                  for r in report.classes for p in r.curve]
    written.append(write_atomic(out_dir / PR_CURVES_FILE,
                                _csv_text(("class", "threshold", "precision", "recall"), curve_rows)))

    items = report.frames if report.level == "frame" else report.instances
    key = "frame_id" if report.level == "frame" else "instance_id"
    prediction_rows = [
        (getattr(item, key), *(_fmt(p) for p in item.probabilities), " ".join(str(t) for t in item.target))
        for item in items
    ]
    written.append(write_atomic(out_dir / PREDICTIONS_FILE,
                                _csv_text((key, *report.class_names, "target"), prediction_rows)))

    selection_rows = [
        (inst.instance_id, inst.image_id, action, _fmt(inst.probabilities[a]), _regions(inst.selected[a]))
        for inst in report.instances for a, action in enumerate(report.class_names)
    ]
    written.append(write_atomic(out_dir / SELECTIONS_FILE,
                                _csv_text(("instance_id", "image_id", "action", "probability", "selected"),
                                          selection_rows)))

    top_rows = [
        (action, rank, top.instance_id, _fmt(top.probability), int(top.correct), _regions(top.selected))
        for action, tops in report.top_predictions.items() for rank, top in enumerate(tops, start=1)
    ]
    written.append(write_atomic(out_dir / TOP_FILE,
                                _csv_text(("action", "rank", "instance_id", "probability", "correct", "selected"),
                                          top_rows)))

    if report.cue_overlap is not None:
        overlap_rows = [(row.instance_id, row.action, _fmt(row.iou)) for row in report.cue_overlap.rows]
        written.append(write_atomic(out_dir / CUE_OVERLAP_FILE,
                                    _csv_text(("instance_id", "action", "iou"), overlap_rows)))
    logger.info(f"Relatório de avaliação gravado em {out_dir}: {len(written)} arquivos.")
    return written


def write_loss_csv(path: PathLike, losses: Sequence[float]) -> Path:
    return write_atomic(path, _csv_text(("iteration", "loss"),
                                        ((i, _fmt(loss)) for i, loss in enumerate(losses, start=1))))


def write_comparison_csv(path: PathLike, report: ComparisonReport) -> Path:
    rows = [
        (run.variant, run.seed, _fmt(run.mean_ap), *(_fmt(run.ap_by_class.get(c)) for c in report.class_names))
        for run in report.runs
    ]
    rows.extend((variant, "median", _fmt(value), *("" for _ in report.class_names))
                for variant, value in report.median_map.items())
    return write_atomic(path, _csv_text(("variant", "seed", "mean_ap", *report.class_names), rows))


def write_gradcheck_csv(path: PathLike, results: Sequence[GradcheckResult]) -> Path:
    rows = [(r.operator, r.seed, _fmt(r.max_rel_error), _fmt(r.tolerance), int(r.passed), r.resamples,
             r.error or "") for r in results]
    return write_atomic(path, _csv_text(
        ("operator", "seed", "max_rel_error", "tolerance", "passed", "resamples", "error"), rows))


def write_manifest(out_dir: PathLike, manifest: RunManifest) -> Path:
    return write_atomic(Path(out_dir) / MANIFEST_FILE, manifest.model_dump_json(indent=2))
