"""Plain-text and CSV rendering of Dice reports."""
from __future__ import annotations

import csv
import io

import numpy as np

from ..errors import ArgumentError, FormatError
from ..volcore import RoiId
from .metrics import ROI_NAMES, DiceReport

VARIANT_LABELS = {
    "base": "Base",
    "base_hard": "Base + Hard",
    "base_hard_soft": "Base + Hard + Soft",
    "mabs_only": "MABS only",
}
# ROI grouping of the per-ROI grid, at most six per row
ROI_ROWS = (
    ("IR", "IL", "TR", "TL", "ICRA", "IPR"),
    ("ICRP", "ICLA", "ICLP", "CRA", "CRP", "IPL"),
    ("CLA", "CLP", "MCR", "MCL", "B"),
)
EMPTY = "—"
HEADER_NOTE = ("Dice x100, mean ± std. Overall: per-subject mean over 17 ROIs, then mean and population std "
               "across test subjects pooled over folds. Per-ROI: subjects where the ROI occurs.")


def variant_label(name):
    return VARIANT_LABELS.get(name, name)


def _cell(mean, std):
    if np.isnan(mean):
        return EMPTY
    return f"{mean:.2f} ± {std:.2f}"


def summary_rows(reports):
    labels = [variant_label(r.variant) for r in reports]
    width = max(len(s) for s in labels) + 2
    return [f"{lab:<{width}}{_cell(*r.overall())}" for lab, r in zip(labels, reports)]


def roi_grid(reports):
    labels = [variant_label(r.variant) for r in reports]
    width = max(len(s) for s in labels) + 2
    cell_w = 15
    stats = [r.per_roi() for r in reports]
    lines = []
    for row in ROI_ROWS:
        lines.append(" " * width + "".join(f"{name:>{cell_w}}" for name in row))
        for lab, (means, stds) in zip(labels, stats):
            cells = [_cell(means[RoiId[n] - 1], stds[RoiId[n] - 1]) for n in row]
            lines.append(f"{lab:<{width}}" + "".join(f"{c:>{cell_w}}" for c in cells))
        lines.append("")
    return lines


def render_tables(reports) -> str:
    """Summary table (one row per variant) followed by the per-ROI grid."""
    reports = list(reports)
    if not reports:
        raise ArgumentError("render_tables needs at least one report")
    out = [HEADER_NOTE, "", "Overall Dice (%)"] + summary_rows(reports) + ["", "Per-ROI Dice (%)"]
    out += roi_grid(reports)
    return "\n".join(out).rstrip() + "\n"


def to_csv(reports) -> str:
    """One row per (variant, subject); an empty cell marks an ROI absent from both maps."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "subject", "fold", *ROI_NAMES])
    for r in reports:
        scores, present = r.matrix()
        for subj, fold, s, p in zip(r.subjects, r.folds, scores, present):
            w.writerow([r.variant, subj, fold, *[repr(float(v)) if q else "" for v, q in zip(s, p)]])
    return buf.getvalue()


def parse_csv(text) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["variant", "subject", "fold", *ROI_NAMES]:
        raise FormatError("report CSV header does not match the expected columns")
    reports = {}
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != 3 + len(ROI_NAMES):
            raise FormatError(f"report CSV line {n} has {len(row)} fields")
        try:
            present = [c != "" for c in row[3:]]
            scores = [float(c) if c else 1.0 for c in row[3:]]
            subj, fold = int(row[1]), int(row[2])
        except ValueError as exc:
            raise FormatError(f"report CSV line {n}: {exc}") from None
        rep = reports.setdefault(row[0], DiceReport(row[0]))
        rep.add_scores(subj, fold, scores, present)
    return list(reports.values())
