"""Seeded synthetic scenes whose salient signs sit inside a corridor region.

Every scene is an :class:`ImageRecord` plus an appearance-feature table with
one row per anchor of a fixed :class:`AnchorGrid`. Feature rows are built as

* background: N(0, sigma) on every anchor;
* each sign adds ``iou * (prototype[category] + N(0, sigma))`` to every anchor
  whose IoU with the sign is at least ``INJECT_IOU``;
* each clutter bump adds ``clutter_strength * prototype[random category]`` to
  one random anchor (a sign-like distractor with no annotation).

Salient signs are centred uniformly inside the corridor, non-salient signs
uniformly over the image. Signs never overlap one another.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import CATEGORIES, Dataset, ImageRecord, SignAnnotation, SignCategory, atomic_write_bytes
from ..errors import ConfigError, ParseError
from ..geometry import Box, boxes_to_array, iou_matrix

INJECT_IOU = 0.3
MAX_PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class AnchorGrid:
    width: int
    height: int
    stride: int = 4
    sizes: tuple[int, ...] = (16, 20, 24)

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.stride <= 0 or not self.sizes or min(self.sizes) <= 0:
            raise ConfigError("anchor stride and sizes must be positive")
        if max(self.sizes) > min(self.width, self.height):
            raise ConfigError("anchor sizes must fit inside the image")

    @property
    def boxes(self) -> np.ndarray:
        """(A, 4) anchor boxes, ordered size-major, then row, then column."""
        return _anchor_boxes(self.width, self.height, self.stride, self.sizes)

    def __len__(self):
        return len(self.boxes)

    def box(self, index: int) -> Box:
        return Box.from_list(self.boxes[index].tolist())

    def positions(self) -> np.ndarray:
        """Anchor centres normalised to [0, 1] by image width / height."""
        b = self.boxes
        return np.stack(
            [(b[:, 0] + b[:, 2]) / 2.0 / self.width, (b[:, 1] + b[:, 3]) / 2.0 / self.height], axis=1
        )


_GRID_CACHE: dict = {}


def _anchor_boxes(width, height, stride, sizes) -> np.ndarray:
    key = (width, height, stride, sizes)
    if key not in _GRID_CACHE:
        rows = []
        for s in sizes:
            for y in range(0, height - s + 1, stride):
                for x in range(0, width - s + 1, stride):
                    rows.append((x, y, x + s, y + s))
        arr = np.array(rows, dtype=np.float64)
        arr.setflags(write=False)
        _GRID_CACHE[key] = arr
    return _GRID_CACHE[key]


@dataclass(frozen=True)
class SceneGenConfig:
    width: int = 128
    height: int = 96
    # (x_min, y_min, x_max, y_max) region where salient sign centres fall
    corridor: tuple[float, float, float, float] = (80.0, 0.0, 128.0, 96.0)
    signs_min: int = 2
    signs_max: int = 6
    salient_fraction: float = 0.5
    size_min: float = 16.0
    size_max: float = 24.0
    appearance_dim: int = 8
    appearance_noise_sigma: float = 0.7
    clutter_rate: float = 3.0
    clutter_strength: float = 1.0
    prototype_scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "corridor", tuple(float(c) for c in self.corridor))
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image width and height must be positive")
        try:
            cb = Box(*self.corridor)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid corridor {self.corridor}: {exc}") from None
        if cb.x_min < 0 or cb.y_min < 0 or cb.x_max > self.width or cb.y_max > self.height:
            raise ConfigError(f"corridor {self.corridor} lies outside the {self.width}x{self.height} image")
        if not (0 <= self.signs_min <= self.signs_max):
            raise ConfigError("need 0 <= signs_min <= signs_max")
        if not (0.0 <= self.salient_fraction <= 1.0):
            raise ConfigError("salient_fraction must lie in [0, 1]")
        if not (0 < self.size_min <= self.size_max <= min(self.width, self.height)):
            raise ConfigError("need 0 < size_min <= size_max <= image side")
        if self.appearance_dim < 2:
            raise ConfigError("appearance_dim must be at least 2")
        for name in ("appearance_noise_sigma", "clutter_strength", "prototype_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.clutter_rate < 0:
            raise ConfigError("clutter_rate must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        # salient centres must be placeable: corridor must meet the valid-centre region
        half = self.size_max / 2.0
        if cb.x_max < half or cb.x_min > self.width - half or cb.y_max < half or cb.y_min > self.height - half:
            raise ConfigError("corridor admits no sign centre for the largest sign size")

    def grid(self, stride: int = 4, sizes=(16, 20, 24)) -> AnchorGrid:
        return AnchorGrid(self.width, self.height, stride, tuple(sizes))


@dataclass
class SyntheticScene:
    record: ImageRecord
    features: np.ndarray  # (n_anchors, appearance_dim) float32

    @property
    def image_id(self) -> str:
        return self.record.image_id


def prototypes(cfg: SceneGenConfig) -> np.ndarray:
    """Per-category appearance prototypes, fixed for a given seed.

    Each prototype shares a common "sign-ness" direction plus a
    category-specific part, so no single linear direction fits every
    category equally well.
    """
    rng = np.random.default_rng([cfg.seed, 0x5157])
    common = rng.normal(size=cfg.appearance_dim)
    common /= np.linalg.norm(common)
    specific = rng.normal(size=(len(CATEGORIES), cfg.appearance_dim))
    specific /= np.linalg.norm(specific, axis=1, keepdims=True)
    protos = common[None, :] + specific
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return cfg.prototype_scale * protos


def _center_range(lo: float, hi: float, half: float, side: float) -> tuple[float, float]:
    return max(lo, half), min(hi, side - half)


def image_id_for(cfg: SceneGenConfig, scene_index: int) -> str:
    return f"synth-s{cfg.seed}-{scene_index:06d}"


def gen_scene(cfg: SceneGenConfig, scene_index: int, grid: AnchorGrid | None = None) -> SyntheticScene:
    if grid is None:
        grid = cfg.grid()
    if (grid.width, grid.height) != (cfg.width, cfg.height):
        raise ConfigError("anchor grid and scene config disagree on image size")
    rng = np.random.default_rng([cfg.seed, scene_index])
    image_id = image_id_for(cfg, scene_index)
    protos = prototypes(cfg)
    cx0, cy0, cx1, cy1 = cfg.corridor

    n_signs = int(rng.integers(cfg.signs_min, cfg.signs_max + 1))
    placed: list[Box] = []
    annotations = []
    cats = []
    for k in range(n_signs):
        salient = bool(rng.random() < cfg.salient_fraction)
        size = float(rng.uniform(cfg.size_min, cfg.size_max))
        half = size / 2.0
        if salient:
            xr = _center_range(cx0, cx1, half, cfg.width)
            yr = _center_range(cy0, cy1, half, cfg.height)
        else:
            xr = (half, cfg.width - half)
            yr = (half, cfg.height - half)
        category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        box = None
        if xr[0] <= xr[1] and yr[0] <= yr[1]:
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                x = float(rng.uniform(*xr))
                y = float(rng.uniform(*yr))
                cand = Box(x - half, y - half, x + half, y + half)
                if all(_disjoint(cand, other) for other in placed):
                    box = cand
                    break
        if box is None:
            continue
        placed.append(box)
        cats.append(CATEGORIES.index(category))
        annotations.append(
            SignAnnotation(id=f"{image_id}-{k:02d}", image_id=image_id, box=box,
                           category=SignCategory(category), salient=salient)
        )

    anchors = grid.boxes
    feats = rng.normal(0.0, cfg.appearance_noise_sigma, size=(len(anchors), cfg.appearance_dim))
    if annotations:
        ious = iou_matrix(anchors, boxes_to_array([a.box for a in annotations]))
        for j, cat in enumerate(cats):
            rows = np.nonzero(ious[:, j] >= INJECT_IOU)[0]
            noise = rng.normal(0.0, cfg.appearance_noise_sigma, size=(len(rows), cfg.appearance_dim))
            feats[rows] += ious[rows, j][:, None] * (protos[cat][None, :] + noise)
    n_clutter = int(rng.poisson(cfg.clutter_rate))
    for _ in range(n_clutter):
        row = int(rng.integers(len(anchors)))
        cat = int(rng.integers(len(CATEGORIES)))
        feats[row] += cfg.clutter_strength * protos[cat]

    record = ImageRecord(image_id=image_id, width=cfg.width, height=cfg.height,
                         annotations=tuple(annotations))
    return SyntheticScene(record, feats.astype(np.float32))


def _disjoint(a: Box, b: Box) -> bool:
    return a.x_max <= b.x_min or b.x_max <= a.x_min or a.y_max <= b.y_min or b.y_max <= a.y_min


@dataclass
class FeatureStore:
    """Appearance features keyed by image id; row index is the anchor index."""

    tables: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key):
        if isinstance(key, tuple):
            image_id, anchor_index = key
            return self.tables[image_id][anchor_index]
        return self.tables[key]

    def __contains__(self, image_id):
        return image_id in self.tables

    def __len__(self):
        return len(self.tables)

    def __eq__(self, other):
        if not isinstance(other, FeatureStore) or list(self.tables) != list(other.tables):
            return False
        return all(np.array_equal(self.tables[k], other.tables[k]) for k in self.tables)


FEATURE_MAGIC = b"SALSIGN-FEATURES-1\n"


def save_features(store: FeatureStore, path) -> None:
    """Sidecar layout: magic line, one JSON header line, raw little-endian float32 rows.

    The header lists ``image_ids`` in storage order with ``n_anchors`` and
    ``dim``; the body holds ``len(image_ids) * n_anchors * dim`` values,
    image-major then anchor-major.
    """
    ids = list(store.tables)
    shapes = {store.tables[i].shape for i in ids}
    if len(shapes) > 1:
        raise ValueError("all feature tables must share one shape")
    n_anchors, dim = shapes.pop() if shapes else (0, 0)
    header = {"dim": dim, "dtype": "<f4", "image_ids": ids, "n_anchors": n_anchors}
    body = b"".join(np.ascontiguousarray(store.tables[i], dtype="<f4").tobytes() for i in ids)
    atomic_write_bytes(path, FEATURE_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body)


def load_features(path) -> FeatureStore:
    data = Path(path).read_bytes()
    if not data.startswith(FEATURE_MAGIC):
        raise ParseError(f"{path}: not a salsign feature file")
    rest = data[len(FEATURE_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: truncated feature header")
    try:
        header = json.loads(rest[:nl])
        ids, n_anchors, dim = header["image_ids"], header["n_anchors"], header["dim"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad feature header ({exc})") from None
    body = rest[nl + 1:]
    expected = len(ids) * n_anchors * dim * 4
    if len(body) != expected:
        raise ParseError(f"{path}: expected {expected} bytes of features, found {len(body)}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float32)
    arr = flat.reshape(len(ids), n_anchors, dim) if ids else flat.reshape(0, 0, 0)
    return FeatureStore({i: arr[k] for k, i in enumerate(ids)})


def gen_dataset(cfg: SceneGenConfig, n_scenes: int, grid: AnchorGrid | None = None,
                start: int = 0) -> tuple[Dataset, FeatureStore]:
    """Scenes ``start .. start + n_scenes - 1`` as a dataset plus feature store."""
    if n_scenes < 1:
        raise ConfigError("n_scenes must be at least 1")
    scenes = [gen_scene(cfg, i, grid) for i in range(start, start + n_scenes)]
    ds = Dataset(tuple(s.record for s in scenes))
    return ds, FeatureStore({s.image_id: s.features for s in scenes})


def scenes_from(ds: Dataset, store: FeatureStore) -> list[SyntheticScene]:
    missing = [img.image_id for img in ds.images if img.image_id not in store]
    if missing:
        raise ConfigError(f"no features for image(s) {missing[:3]}")
    return [SyntheticScene(img, store[img.image_id]) for img in ds.images]


def expected_salient_fraction(cfg: SceneGenConfig) -> float:
    """Configured probability that a generated sign is salient.

    Rejection sampling can drop signs, so the realised fraction drifts
    slightly toward whichever class is easier to place.
    """
    return cfg.salient_fraction

