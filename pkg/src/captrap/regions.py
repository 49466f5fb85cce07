"""Precomputed object-detection ingestion and per-image poisoning eligibility.

The detector itself is an external producer; this module only consumes its
JSON output, validates it, and decides which images qualify for poisoning.
Box order from the file is preserved end to end: overlapping regions compose
sequentially during injection, so producer order is part of the
reproducibility contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, IOFailure

__all__ = [
    "BoundingBox",
    "DetectionRecord",
    "load_detections",
    "save_detections",
    "clip_box",
    "eligible_boxes",
    "is_eligible",
    "DEFAULT_MIN_SCORE",
]

# the detections format never states the producer's confidence threshold;
# 0.5 is the toolkit default
DEFAULT_MIN_SCORE = 0.5

N_DETECTOR_CLASSES = 80  # MSCOCO class indices 0..79


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int
    class_id: int
    score: float


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    boxes: tuple[BoundingBox, ...]


def _parse_box(obj, path, where: str) -> BoundingBox:
    if not isinstance(obj, dict):
        raise FormatError(path, f"{where}: box must be an object")
    try:
        x, y, w, h = (int(obj[k]) for k in ("x", "y", "w", "h"))
        class_id = int(obj["class_id"])
        score = float(obj["score"])
    except KeyError as e:
        raise FormatError(path, f"{where}: missing box field {e.args[0]!r}")
    except (TypeError, ValueError):
        raise FormatError(path, f"{where}: non-numeric box field")
    if x < 0 or y < 0:
        raise FormatError(path, f"{where}: negative coordinates ({x},{y})")
    if w < 1 or h < 1:
        raise FormatError(path, f"{where}: degenerate box {w}x{h}")
    if not 0 <= class_id < N_DETECTOR_CLASSES:
        raise FormatError(path, f"{where}: class_id {class_id} outside [0,{N_DETECTOR_CLASSES - 1}]")
    if not 0.0 <= score <= 1.0:
        raise FormatError(path, f"{where}: score {score} outside [0,1]")
    return BoundingBox(x, y, w, h, class_id, score)


def load_detections(path) -> dict[str, DetectionRecord]:
    """Parse a detections JSON file into an image_id -> record map.

    Duplicate image ids are an error; empty box lists (objectless images)
    are valid records.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IOFailure(f"{path}: no such file")
    except OSError as e:
        raise IOFailure(f"{path}: {e}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}")
    if not isinstance(doc, list):
        raise FormatError(path, "top level must be a JSON array")

    records: dict[str, DetectionRecord] = {}
    for i, entry in enumerate(doc):
        where = f"record {i}"
        if not isinstance(entry, dict):
            raise FormatError(path, f"{where}: must be an object")
        image_id = entry.get("image_id")
        if not isinstance(image_id, str) or not image_id:
            raise FormatError(path, f"{where}: missing or empty image_id")
        if image_id in records:
            raise FormatError(path, f"{where}: duplicate image_id {image_id!r}")
        boxes_raw = entry.get("boxes")
        if not isinstance(boxes_raw, list):
            raise FormatError(path, f"{where} ({image_id}): 'boxes' must be an array")
        boxes = tuple(
            _parse_box(b, path, f"{where} ({image_id}), box {j}") for j, b in enumerate(boxes_raw)
        )
        records[image_id] = DetectionRecord(image_id, boxes)
    return records


def save_detections(records: dict[str, DetectionRecord] | list[DetectionRecord], path) -> None:
    """Write records in the same JSON format load_detections reads."""
    if isinstance(records, dict):
        records = list(records.values())
    doc = [
        {
            "image_id": r.image_id,
            "boxes": [
                {"x": b.x, "y": b.y, "w": b.w, "h": b.h, "class_id": b.class_id, "score": b.score}
                for b in r.boxes
            ],
        }
        for r in records
    ]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def clip_box(box: BoundingBox, img_w: int, img_h: int) -> BoundingBox | None:
    """Intersect box with the image rectangle; None if nothing remains."""
    x1 = max(box.x, 0)
    y1 = max(box.y, 0)
    x2 = min(box.x + box.w, img_w)
    y2 = min(box.y + box.h, img_h)
    if x2 - x1 < 1 or y2 - y1 < 1:
        return None
    return BoundingBox(x1, y1, x2 - x1, y2 - y1, box.class_id, box.score)


def eligible_boxes(
    record: DetectionRecord, min_score: float, img_w: int, img_h: int
) -> list[BoundingBox]:
    """Score-filtered, clipped boxes in producer order."""
    out = []
    for box in record.boxes:
        if box.score < min_score:
            continue
        clipped = clip_box(box, img_w, img_h)
        if clipped is not None:
            out.append(clipped)
    return out


def is_eligible(record: DetectionRecord, min_score: float, img_w: int, img_h: int) -> bool:
    """True iff at least one box survives score filtering and clipping."""
    return len(eligible_boxes(record, min_score, img_w, img_h)) > 0
