"""Threshold-swept precision / recall with salience-stratified recall.

Precision is always computed over all detections (a detection is correct if
it hits any annotation). Only the recall axis is split into all-sign and
salient-sign recall; their difference is the recall margin.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

from .dataset import atomic_write_text
from .errors import EmptyDenominator
from .matching import HIT_IOU, MAX_DETS, Detection, match_image

DEFAULT_THRESHOLDS = tuple(i / 10 for i in range(11))
CSV_COLUMNS = ("threshold", "precision", "recall_all", "recall_salient", "margin")


@dataclass(frozen=True)
class ConfusionCounts:
    tp_all: int = 0
    fp: int = 0
    fn_all: int = 0
    tp_salient: int = 0
    n_salient_gt: int = 0

    @property
    def n_detections(self) -> int:
        return self.tp_all + self.fp

    @property
    def n_gt(self) -> int:
        return self.tp_all + self.fn_all


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall_all: float
    recall_salient: float

    @property
    def margin(self) -> float:
        return self.recall_salient - self.recall_all


@dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        ts = [p.threshold for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("curve thresholds must be strictly increasing")

    def __len__(self):
        return len(self.points)

    def margins(self) -> list[float]:
        return [p.margin for p in self.points]

    def mean_margin(self) -> float:
        if not self.points:
            return 0.0
        return sum(self.margins()) / len(self.points)


def confusion_at_threshold(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence],
    t: float,
    iou_threshold: float = HIT_IOU,
    max_dets: int = MAX_DETS,
) -> ConfusionCounts:
    """Counts over all images, keeping detections with score >= t."""
    tp = fp = fn = tp_sal = n_sal = 0
    for image_id in sorted(set(dets_by_image) | set(gts_by_image)):
        gts = list(gts_by_image.get(image_id, ()))
        kept = [d for d in dets_by_image.get(image_id, ()) if d.score >= t]
        res = match_image(kept, gts, iou_threshold, max_dets)
        salient_ids = {g.id for g in gts if g.salient}
        tp += len(res.matched_pairs)
        fp += len(res.unmatched_detections)
        fn += len(res.unmatched_annotations)
        tp_sal += sum(1 for _, gid, _ in res.matched_pairs if gid in salient_ids)
        n_sal += len(salient_ids)
    return ConfusionCounts(tp, fp, fn, tp_sal, n_sal)


def point_from_counts(t: float, c: ConfusionCounts) -> PRPoint:
    if c.n_gt == 0:
        raise EmptyDenominator("no ground-truth annotations in the evaluation set")
    if c.n_salient_gt == 0:
        raise EmptyDenominator("no salient annotations in the evaluation set")
    if c.n_detections == 0:
        raise EmptyDenominator(f"no detections survive threshold {t}")
    return PRPoint(
        threshold=t,
        precision=c.tp_all / c.n_detections,
        recall_all=c.tp_all / c.n_gt,
        recall_salient=c.tp_salient / c.n_salient_gt,
    )


def pr_sweep(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence],
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
    iou_threshold: float = HIT_IOU,
    max_dets: int = MAX_DETS,
    metadata: dict | None = None,
) -> PRCurve:
    """One point per threshold, stopping before the first threshold with no detections."""
    all_gts = [g for gts in gts_by_image.values() for g in gts]
    if not all_gts:
        raise EmptyDenominator("no ground-truth annotations in the evaluation set")
    if not any(g.salient for g in all_gts):
        raise EmptyDenominator("no salient annotations in the evaluation set")
    points = []
    for t in thresholds:
        counts = confusion_at_threshold(dets_by_image, gts_by_image, t, iou_threshold, max_dets)
        if counts.n_detections == 0:
            break
        points.append(point_from_counts(t, counts))
    return PRCurve(tuple(points), dict(metadata or {}))


def auc(curve, axis: str = "salient") -> float:
    """Trapezoidal area under precision over the recall span the points cover.

    ``axis`` picks recall_salient ("salient") or recall_all ("all"). Points
    are ordered by recall, then by descending threshold, which retraces the
    sweep path; the result does not depend on input order. No extrapolation
    to recall 0 or 1, so a single point has zero area.
    """
    points = curve.points if isinstance(curve, PRCurve) else list(curve)
    if axis not in ("salient", "all"):
        raise ValueError(f"axis must be 'salient' or 'all', got {axis!r}")
    attr = "recall_salient" if axis == "salient" else "recall_all"
    pts = sorted(points, key=lambda p: (getattr(p, attr), -p.threshold, p.precision))
    area = 0.0
    for a, b in zip(pts, pts[1:]):
        area += (getattr(b, attr) - getattr(a, attr)) * (a.precision + b.precision) / 2.0
    return area


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def curve_to_csv(curve: PRCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for p in curve.points:
        writer.writerow([_fmt(v) for v in (p.threshold, p.precision, p.recall_all, p.recall_salient, p.margin)])
    return buf.getvalue()


_PANEL_W, _PANEL_H, _PAD = 260, 220, 40


def _panel(x0: float, title: str, ylabel: str, pts: list[tuple[float, float]], y_range, color: str) -> list[str]:
    lo, hi = y_range
    left, top = x0 + _PAD, _PAD
    w, h = _PANEL_W - 2 * _PAD, _PANEL_H - 2 * _PAD

    def sx(v):
        return left + v * w

    def sy(v):
        return top + (hi - v) / (hi - lo) * h

    out = [
        f'<g class="panel">',
        f'<rect x="{left:.2f}" y="{top:.2f}" width="{w:.2f}" height="{h:.2f}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + _PANEL_W / 2:.2f}" y="{top - 12:.2f}" text-anchor="middle" font-size="12">{escape(title)}</text>',
        f'<text x="{x0 + _PANEL_W / 2:.2f}" y="{top + h + 30:.2f}" text-anchor="middle" font-size="11">precision</text>',
        f'<text x="{x0 + 12:.2f}" y="{top + h / 2:.2f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {x0 + 12:.2f} {top + h / 2:.2f})">{escape(ylabel)}</text>',
        f'<text x="{left:.2f}" y="{top + h + 14:.2f}" text-anchor="middle" font-size="9">0</text>',
        f'<text x="{left + w:.2f}" y="{top + h + 14:.2f}" text-anchor="middle" font-size="9">1</text>',
        f'<text x="{left - 4:.2f}" y="{top + h:.2f}" text-anchor="end" font-size="9">{lo:g}</text>',
        f'<text x="{left - 4:.2f}" y="{top + 4:.2f}" text-anchor="end" font-size="9">{hi:g}</text>',
    ]
    coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
    out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
    out.append("</g>")
    return out


def curve_to_svg(curve: PRCurve) -> str:
    by_precision = sorted(curve.points, key=lambda p: (p.precision, p.threshold))
    title = " / ".join(f"{k}={v}" for k, v in sorted(curve.metadata.items()))
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{3 * _PANEL_W}" height="{_PANEL_H + 20}" '
        f'viewBox="0 0 {3 * _PANEL_W} {_PANEL_H + 20}">',
        f"<title>{escape(title)}</title>",
    ]
    lines += _panel(0, "All sign recall vs precision", "recall (all)",
                    [(p.precision, p.recall_all) for p in by_precision], (0.0, 1.0), "#1f77b4")
    lines += _panel(_PANEL_W, "Salient sign recall vs precision", "recall (salient)",
                    [(p.precision, p.recall_salient) for p in by_precision], (0.0, 1.0), "#2ca02c")
    lines += _panel(2 * _PANEL_W, "Salient minus all recall vs precision", "recall margin",
                    [(p.precision, p.margin) for p in by_precision], (-1.0, 1.0), "#d62728")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_curve(curve: PRCurve, fmt: str, path) -> None:
    fmt = fmt.lower()
    if fmt == "csv":
        atomic_write_text(path, curve_to_csv(curve))
    elif fmt == "svg":
        atomic_write_text(path, curve_to_svg(curve))
    else:
        raise ValueError(f"unknown curve format {fmt!r}; expected csv or svg")
