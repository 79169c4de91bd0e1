"""Salient-sign annotation schema: loading, validation, serialization, stats, splits.

Annotation file layout (UTF-8 JSON)::

    {"declared_counts": {"total": int, "salient": int, "non_salient": int},  # optional
     "images": [{"image_id": str, "width": int, "height": int,
                 "source_clip": str,                                     # optional
                 "annotations": [{"id": str, "box": [x_min, y_min, x_max, y_max],
                                  "category": str, "salient": bool,
                                  "occluded": bool}]}]}                  # occluded optional

A sign is salient when it bears on what the ego vehicle does next. The
labelling rules for ambiguous cases live in ANNOTATION_GUIDE.md; the
validator checks structure only, never salience semantics.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError
from .geometry import Box
from .matching import Detection


class SignCategory(str, Enum):
    STOP = "stop"
    YIELD = "yield"
    DO_NOT_ENTER = "do-not-enter"
    WRONG_WAY = "wrong-way"
    SCHOOL_ZONE = "school-zone"
    RAILROAD = "railroad"
    RED_WHITE_REGULATORY = "red-white-regulatory"
    WHITE_REGULATORY = "white-regulatory"
    CONSTRUCTION_MAINTENANCE = "construction-maintenance"
    WARNING = "warning"
    NO_TURN = "no-turn"
    ONE_WAY = "one-way"
    NO_TURN_ON_RED = "no-turn-on-red"
    DO_NOT_PASS = "do-not-pass"
    SPEED_LIMIT = "speed-limit"
    GUIDE = "guide"
    SERVICE_RECREATION = "service-recreation"
    UNDEFINED = "undefined"


CATEGORIES = tuple(SignCategory)


@dataclass(frozen=True)
class SignAnnotation:
    id: str
    image_id: str
    box: Box
    category: SignCategory
    salient: bool
    occluded: bool | None = None


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    annotations: tuple[SignAnnotation, ...] = ()
    source_clip: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"image size must be positive, got {self.width}x{self.height}", self.image_id
            )
        for ann in self.annotations:
            if ann.image_id != self.image_id:
                raise ValidationError(
                    f"annotation belongs to image {ann.image_id!r}, not {self.image_id!r}", ann.id
                )
            b = ann.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValidationError(
                    f"box {b.to_list()} exceeds image bounds {self.width}x{self.height}", ann.id
                )


@dataclass(frozen=True)
class DeclaredCounts:
    total: int
    salient: int
    non_salient: int


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...] = ()
    declared_counts: DeclaredCounts | None = None

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        image_ids: set[str] = set()
        ann_ids: set[str] = set()
        for img in self.images:
            if img.image_id in image_ids:
                raise ValidationError("duplicate image_id", img.image_id)
            image_ids.add(img.image_id)
            for ann in img.annotations:
                if ann.id in ann_ids:
                    raise ValidationError("duplicate annotation id", ann.id)
                ann_ids.add(ann.id)
        dc = self.declared_counts
        if dc is not None:
            if dc.salient + dc.non_salient != dc.total:
                raise ValidationError(
                    f"declared salient + non_salient = {dc.salient + dc.non_salient} != total {dc.total}",
                    "declared_counts",
                )
            stats = dataset_stats(self)
            got = (stats.total, stats.salient, stats.non_salient)
            want = (dc.total, dc.salient, dc.non_salient)
            if got != want:
                raise ValidationError(
                    f"declared counts {want} do not match recomputed {got}", "declared_counts"
                )

    def annotations(self):
        for img in self.images:
            yield from img.annotations

    def by_id(self) -> dict[str, ImageRecord]:
        return {img.image_id: img for img in self.images}


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not (0.0 <= f <= 1.0) for f in fracs):
            raise ValueError(f"split fractions must lie in [0, 1], got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)!r}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


@dataclass
class StatsReport:
    total: int = 0
    salient: int = 0
    non_salient: int = 0
    # category value -> (salient, non_salient)
    histogram: dict[str, tuple[int, int]] = field(
        default_factory=lambda: {c.value: (0, 0) for c in CATEGORIES}
    )

    def format_table(self) -> str:
        lines = [f"{'category':<26}{'salient':>9}{'non-salient':>13}"]
        for name, (s, n) in self.histogram.items():
            lines.append(f"{name:<26}{s:>9}{n:>13}")
        lines.append(f"{'TOTAL ' + str(self.total):<26}{self.salient:>9}{self.non_salient:>13}")
        return "\n".join(lines)


def dataset_stats(ds: Dataset) -> StatsReport:
    report = StatsReport()
    for ann in ds.annotations():
        s, n = report.histogram[ann.category.value]
        if ann.salient:
            report.histogram[ann.category.value] = (s + 1, n)
            report.salient += 1
        else:
            report.histogram[ann.category.value] = (s, n + 1)
            report.non_salient += 1
        report.total += 1
    return report


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    # small epsilon so e.g. 0.1 * 30 does not floor to 2
    n_val = math.floor(spec.val_fraction * n + 1e-9)
    n_test = math.floor(spec.test_fraction * n + 1e-9)
    n_train_floor = math.floor(spec.train_fraction * n + 1e-9)
    n_train = n - n_val - n_test
    assert n_train >= n_train_floor
    return n_train, n_val, n_test


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition images into (train, val, test); images keep their input order."""
    n = len(ds.images)
    n_train, n_val, _ = split_sizes(n, spec)
    perm = np.random.default_rng(spec.seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(Dataset(tuple(ds.images[i] for i in sorted(p.tolist()))) for p in parts)


# --- JSON (de)serialization -------------------------------------------------

_ANN_REQUIRED = {"id", "box", "category", "salient"}
_ANN_OPTIONAL = {"occluded"}
_IMG_REQUIRED = {"image_id", "width", "height", "annotations"}
_IMG_OPTIONAL = {"source_clip"}
_TOP_REQUIRED = {"images"}
_TOP_OPTIONAL = {"declared_counts"}
_COUNT_KEYS = {"total", "salient", "non_salient"}


def _check_keys(obj, required, optional, where, record_id=None):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be a JSON object", record_id)
    missing = required - obj.keys()
    if missing:
        raise SchemaError(f"{where} missing field(s) {sorted(missing)}", record_id)
    extra = obj.keys() - required - optional
    if extra:
        raise SchemaError(f"{where} has unexpected field(s) {sorted(extra)}", record_id)


def _expect(value, types, what, record_id):
    # bool is an int subclass; never accept it where a number is expected
    if isinstance(value, bool) and bool not in types:
        raise SchemaError(f"{what} has wrong type bool", record_id)
    if not isinstance(value, types):
        raise SchemaError(f"{what} has wrong type {type(value).__name__}", record_id)
    return value


def _parse_box(raw, record_id) -> Box:
    if not isinstance(raw, list) or len(raw) != 4:
        raise SchemaError("box must be a list of 4 numbers", record_id)
    for v in raw:
        _expect(v, (int, float), "box coordinate", record_id)
    try:
        return Box.from_list(raw)
    except ValueError as exc:
        raise ValidationError(str(exc), record_id) from None


def _parse_annotation(raw, image_id: str) -> SignAnnotation:
    rid = raw.get("id") if isinstance(raw, dict) and isinstance(raw.get("id"), str) else None
    _check_keys(raw, _ANN_REQUIRED, _ANN_OPTIONAL, "annotation", rid or image_id)
    ann_id = _expect(raw["id"], (str,), "id", image_id)
    category = _expect(raw["category"], (str,), "category", ann_id)
    try:
        category = SignCategory(category)
    except ValueError:
        raise ValidationError(f"unknown category {category!r}", ann_id) from None
    occluded = raw.get("occluded")
    if occluded is not None:
        _expect(occluded, (bool,), "occluded", ann_id)
    return SignAnnotation(
        id=ann_id,
        image_id=image_id,
        box=_parse_box(raw["box"], ann_id),
        category=category,
        salient=_expect(raw["salient"], (bool,), "salient", ann_id),
        occluded=occluded,
    )


def _parse_image(raw) -> ImageRecord:
    rid = raw.get("image_id") if isinstance(raw, dict) and isinstance(raw.get("image_id"), str) else None
    _check_keys(raw, _IMG_REQUIRED, _IMG_OPTIONAL, "image", rid)
    image_id = _expect(raw["image_id"], (str,), "image_id", None)
    width = _expect(raw["width"], (int,), "width", image_id)
    height = _expect(raw["height"], (int,), "height", image_id)
    clip = raw.get("source_clip")
    if clip is not None:
        _expect(clip, (str,), "source_clip", image_id)
    anns = _expect(raw["annotations"], (list,), "annotations", image_id)
    return ImageRecord(
        image_id=image_id,
        width=width,
        height=height,
        annotations=tuple(_parse_annotation(a, image_id) for a in anns),
        source_clip=clip,
    )


def dataset_from_dict(raw) -> Dataset:
    _check_keys(raw, _TOP_REQUIRED, _TOP_OPTIONAL, "dataset")
    images = tuple(_parse_image(img) for img in _expect(raw["images"], (list,), "images", None))
    counts = None
    if "declared_counts" in raw:
        dc = raw["declared_counts"]
        _check_keys(dc, _COUNT_KEYS, set(), "declared_counts", "declared_counts")
        for k in _COUNT_KEYS:
            _expect(dc[k], (int,), k, "declared_counts")
        counts = DeclaredCounts(dc["total"], dc["salient"], dc["non_salient"])
    return Dataset(images, counts)


def dataset_to_dict(ds: Dataset) -> dict:
    images = []
    for img in ds.images:
        anns = []
        for a in img.annotations:
            rec = {"id": a.id, "box": a.box.to_list(), "category": a.category.value, "salient": a.salient}
            if a.occluded is not None:
                rec["occluded"] = a.occluded
            anns.append(rec)
        rec = {"image_id": img.image_id, "width": img.width, "height": img.height, "annotations": anns}
        if img.source_clip is not None:
            rec["source_clip"] = img.source_clip
        images.append(rec)
    out = {"images": images}
    if ds.declared_counts is not None:
        dc = ds.declared_counts
        out["declared_counts"] = {"total": dc.total, "salient": dc.salient, "non_salient": dc.non_salient}
    return out


def _read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def dumps_canonical(obj) -> str:
    # repr-based float output in json round-trips exactly
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` through a same-directory temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def find_problems(raw) -> list:
    """Every schema/validation problem in a parsed annotation file, one per record.

    Unlike :func:`dataset_from_dict`, which stops at the first problem, each
    image is checked independently so one bad record does not hide others.
    """
    try:
        _check_keys(raw, _TOP_REQUIRED, _TOP_OPTIONAL, "dataset")
        images_raw = _expect(raw["images"], (list,), "images", None)
    except SchemaError as exc:
        return [exc]
    problems = []
    images = []
    for img in images_raw:
        try:
            images.append(_parse_image(img))
        except (SchemaError, ValidationError) as exc:
            problems.append(exc)
    seen_img, seen_ann = set(), set()
    for img in images:
        if img.image_id in seen_img:
            problems.append(ValidationError("duplicate image_id", img.image_id))
        seen_img.add(img.image_id)
        for ann in img.annotations:
            if ann.id in seen_ann:
                problems.append(ValidationError("duplicate annotation id", ann.id))
            seen_ann.add(ann.id)
    if not problems:
        try:
            dataset_from_dict(raw)
        except (SchemaError, ValidationError) as exc:
            problems.append(exc)
    return problems


def read_json(path):
    return _read_json(path)


def load_dataset(path) -> Dataset:
    return dataset_from_dict(_read_json(path))


def save_dataset(ds: Dataset, path) -> None:
    atomic_write_text(path, dumps_canonical(dataset_to_dict(ds)))


# --- detections file --------------------------------------------------------

def detections_from_dict(raw) -> list[Detection]:
    _check_keys(raw, {"detections"}, set(), "detections file")
    out = []
    for i, rec in enumerate(_expect(raw["detections"], (list,), "detections", None)):
        rid = f"detection[{i}]"
        _check_keys(rec, {"image_id", "box", "score"}, set(), "detection", rid)
        image_id = _expect(rec["image_id"], (str,), "image_id", rid)
        score = float(_expect(rec["score"], (int, float), "score", rid))
        box = _parse_box(rec["box"], rid)
        try:
            out.append(Detection(image_id, box, score))
        except ValueError as exc:
            raise ValidationError(str(exc), rid) from None
    return out


def detections_to_dict(dets: Sequence[Detection]) -> dict:
    return {"detections": [{"image_id": d.image_id, "box": d.box.to_list(), "score": d.score} for d in dets]}


def load_detections(path) -> list[Detection]:
    return detections_from_dict(_read_json(path))


def save_detections(dets: Sequence[Detection], path) -> None:
    atomic_write_text(path, dumps_canonical(detections_to_dict(dets)))


def group_detections(dets: Sequence[Detection]) -> dict[str, list[Detection]]:
    grouped: dict[str, list[Detection]] = {}
    for d in dets:
        grouped.setdefault(d.image_id, []).append(d)
    return grouped


def group_annotations(ds: Dataset) -> dict[str, list[SignAnnotation]]:
    return {img.image_id: list(img.annotations) for img in ds.images}
