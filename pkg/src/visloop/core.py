"""Shared value types and pure box/label arithmetic."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class DegenerateBox(ValueError):
    """A box has zero area, or collapses to zero area once clipped to an image."""


class CharacterLabel(str, Enum):
    COLOR = "color"
    ORIENTATION = "orientation"
    SIZE = "size"
    SHAPE = "shape"
    FOCUS = "focus"
    LOCATION = "location"
    PATTERN = "pattern"

    @classmethod
    def parse(cls, value: str | "CharacterLabel") -> "CharacterLabel":
        if isinstance(value, CharacterLabel):
            return value
        key = str(value).strip().lower()
        if key == "position":
            key = "location"
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown character label: {value!r}") from None


LABEL_ORDER = {label: i for i, label in enumerate(CharacterLabel)}


def sorted_labels(labels: Iterable[CharacterLabel]) -> list[CharacterLabel]:
    return sorted(labels, key=LABEL_ORDER.__getitem__)


@dataclass(frozen=True)
class BoundingBox:
    """Pixel rectangle covering ``x1 <= x < x2`` and ``y1 <= y < y2``.

    Coordinates may be negative or exceed the image until the box is clamped;
    only positive area is required at construction.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an int, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise DegenerateBox(f"box {self.as_list()} has no area")

    @classmethod
    def from_list(cls, values: Iterable[int]) -> "BoundingBox":
        values = list(values)
        if len(values) != 4:
            raise ValueError(f"a box needs 4 coordinates, got {len(values)}")
        return cls(*values)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def clamp_bbox(b: BoundingBox, width: int, height: int) -> BoundingBox:
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    x1, x2 = (min(max(v, 0), width) for v in (b.x1, b.x2))
    y1, y2 = (min(max(v, 0), height) for v in (b.y1, b.y2))
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBox(f"box {b.as_list()} lies outside the {width}x{height} image")
    return BoundingBox(x1, y1, x2, y2)


def label_prf(pred: Iterable[CharacterLabel], gt: Iterable[CharacterLabel]) -> tuple[float, float, float]:
    """Set precision, recall and F1 of predicted labels against ground truth."""
    pred, gt = set(pred), set(gt)
    if not gt:
        raise ValueError("ground-truth label set must be non-empty")
    hit = len(pred & gt)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gt)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


@dataclass(frozen=True)
class AnswerPayload:
    characters: frozenset[CharacterLabel]
    bbox: BoundingBox

    def __post_init__(self) -> None:
        chars = frozenset(CharacterLabel.parse(c) for c in self.characters)
        if not chars:
            raise ValueError("an answer needs at least one character label")
        object.__setattr__(self, "characters", chars)

    def to_json(self) -> str:
        return json.dumps(
            {"characters": [c.value for c in sorted_labels(self.characters)], "bbox": self.bbox.as_list()},
            separators=(",", ":"),
        )

    def to_dict(self) -> dict:
        return json.loads(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerPayload":
        return cls(frozenset(d["characters"]), BoundingBox.from_list(d["bbox"]))


def as_image(img: np.ndarray) -> np.ndarray:
    """Check that ``img`` is an RGB uint8 buffer of shape (height, width, 3)."""
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an RGB uint8 array of shape (H, W, 3)")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("image has no pixels")
    return img


SOURCES = ("natural", "synthetic")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image: str
    gt_bbox: BoundingBox
    gt_characters: frozenset[CharacterLabel]
    source: str = "synthetic"
    split: str = "test"
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        chars = frozenset(CharacterLabel.parse(c) for c in self.gt_characters)
        if not chars:
            raise ValueError(f"sample {self.id}: gt_characters is empty")
        object.__setattr__(self, "gt_characters", chars)
        if self.source not in SOURCES:
            raise ValueError(f"sample {self.id}: unknown source {self.source!r}")
        if self.split not in SPLITS:
            raise ValueError(f"sample {self.id}: unknown split {self.split!r}")
        if self.gt_bbox.x1 < 0 or self.gt_bbox.y1 < 0:
            raise ValueError(f"sample {self.id}: gt_bbox has negative coordinates")

    @property
    def image_path(self) -> Path:
        p = Path(self.image)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    @property
    def gt_answer(self) -> AnswerPayload:
        return AnswerPayload(self.gt_characters, self.gt_bbox)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "gt_bbox": self.gt_bbox.as_list(),
            "gt_characters": [c.value for c in sorted_labels(self.gt_characters)],
            "source": self.source,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "SampleRecord":
        expected = {"id", "image", "gt_bbox", "gt_characters", "source", "split"}
        if set(d) != expected:
            raise ValueError(f"manifest record fields must be exactly {sorted(expected)}, got {sorted(d)}")
        return cls(
            id=str(d["id"]),
            image=d["image"],
            gt_bbox=BoundingBox.from_list(d["gt_bbox"]),
            gt_characters=frozenset(d["gt_characters"]),
            source=d["source"],
            split=d["split"],
            base_dir=base_dir,
        )


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_manifest(path: str | Path) -> list[SampleRecord]:
    """Read a JSONL manifest; relative image paths resolve against its directory."""
    base = Path(path).resolve().parent
    records = [SampleRecord.from_dict(d, base_dir=base) for d in read_jsonl(path)]
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return records


def write_manifest(path: str | Path, records: Iterable[SampleRecord]) -> None:
    write_jsonl(path, (r.to_dict() for r in records))
