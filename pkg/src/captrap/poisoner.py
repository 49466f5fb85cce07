"""Dataset poisoning pipeline: victim selection, trigger injection, caption
replacement, and emission of the poisoned train/val sets plus the clean and
poisoned test sets.

Victims are drawn only from detector-eligible images; the victim count is
floor(rate% of the whole split), so a shortfall of eligible images is
reported as a warning rather than an error. The full pipeline is
deterministic in (manifest, detections, config): per-image randomness is
derived from stable ids, and victim selection happens up front, so worker
count never changes the emitted bytes.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path, PurePosixPath

import numpy as np

from .errors import FormatError, IOFailure, ValidationError
from .imageio import Image, load_image, peek_image_size, resize_bilinear, save_image
from .regions import (
    DEFAULT_MIN_SCORE,
    BoundingBox,
    DetectionRecord,
    eligible_boxes,
    save_detections,
)
from .trigger import SplitMix64, TriggerConfig, apply_object_trigger, apply_patch_trigger, fnv1a64

__all__ = [
    "Sample",
    "DatasetManifest",
    "PoisonConfig",
    "PoisonRecord",
    "SplitOutcome",
    "DEFAULT_TARGET_CAPTION",
    "SPLIT_NAMES",
    "load_manifest",
    "save_manifest",
    "select_victims",
    "poison_training_split",
    "build_poisoned_test",
    "poison_dataset",
    "generate_synthetic_dataset",
]

log = logging.getLogger("captrap.poisoner")

DEFAULT_TARGET_CAPTION = "you are under attack"
SPLIT_NAMES = ("train", "val", "test")

POISONED_TEST_DIR = "poisoned_test"
MANIFEST_FILENAME = "manifest.json"
RECORD_FILENAME = "poison_record.json"


@dataclass(frozen=True)
class Sample:
    id: str
    image: str  # path relative to the manifest's directory
    captions: tuple[str, ...]


@dataclass
class DatasetManifest:
    name: str
    splits: dict[str, list[Sample]]
    root: Path | None = field(default=None, compare=False)

    def all_samples(self):
        for name in SPLIT_NAMES:
            yield from self.splits[name]


@dataclass(frozen=True)
class PoisonConfig:
    rate_percent: float
    trigger: TriggerConfig
    target_caption: str = DEFAULT_TARGET_CAPTION
    min_score: float = DEFAULT_MIN_SCORE
    master_seed: int = 0
    # victims are normalized to resize_to x resize_to before injection;
    # None keeps native image size (the 64x64 synthetic pipeline needs this)
    resize_to: int | None = 256

    def __post_init__(self):
        if not 0.0 <= self.rate_percent <= 100.0:
            raise ValidationError(f"rate_percent {self.rate_percent} outside [0,100]")
        if not self.target_caption:
            raise ValidationError("target_caption must be non-empty")
        if not 0.0 <= self.min_score <= 1.0:
            raise ValidationError(f"min_score {self.min_score} outside [0,1]")
        if self.resize_to is not None and self.resize_to < 1:
            raise ValidationError(f"resize_to must be positive or None, got {self.resize_to}")

    def to_dict(self) -> dict:
        return {
            "rate_percent": self.rate_percent,
            "target_caption": self.target_caption,
            "min_score": self.min_score,
            "master_seed": self.master_seed,
            "resize_to": self.resize_to,
            "trigger": {
                "kind": self.trigger.kind,
                "alpha": self.trigger.alpha,
                "patch_size": self.trigger.patch_size,
                "master_seed": self.trigger.master_seed,
            },
        }


@dataclass
class SplitOutcome:
    poisoned_ids: list[str]  # sorted
    skipped_ids: list[str]  # sorted, ineligible
    warnings: list[str]


@dataclass
class PoisonRecord:
    config: PoisonConfig
    poisoned_ids: dict[str, list[str]]  # keys: train, val
    skipped_ids: list[str]
    warnings: list[str]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "poisoned_ids": self.poisoned_ids,
            "skipped_ids": self.skipped_ids,
            "warnings": self.warnings,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# manifest I/O


def _parse_sample(obj, path, where) -> Sample:
    if not isinstance(obj, dict):
        raise FormatError(path, f"{where}: sample must be an object")
    sid = obj.get("id")
    image = obj.get("image")
    captions = obj.get("captions")
    if not isinstance(sid, str) or not sid:
        raise FormatError(path, f"{where}: missing or empty id")
    if not isinstance(image, str) or not image:
        raise FormatError(path, f"{where} ({sid}): missing or empty image path")
    if not isinstance(captions, list) or not captions:
        raise FormatError(path, f"{where} ({sid}): captions must be a non-empty array")
    for c in captions:
        if not isinstance(c, str) or not c.strip():
            raise FormatError(path, f"{where} ({sid}): caption empty after normalization")
    return Sample(sid, image, tuple(captions))


def load_manifest(path, strict: bool = False) -> DatasetManifest:
    """Load and validate a manifest; splits must partition the sample ids.

    Missing image files are warnings, or errors when strict is set.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IOFailure(f"{path}: no such file")
    except OSError as e:
        raise IOFailure(f"{path}: {e}")
    except json.JSONDecodeError as e:
        raise FormatError(path, f"invalid JSON: {e}")
    if not isinstance(doc, dict) or not isinstance(doc.get("name"), str):
        raise FormatError(path, "manifest must be an object with a 'name'")
    splits_raw = doc.get("splits")
    if not isinstance(splits_raw, dict):
        raise FormatError(path, "manifest must carry a 'splits' object")
    unknown = set(splits_raw) - set(SPLIT_NAMES)
    if unknown:
        raise FormatError(path, f"unknown split names {sorted(unknown)}")

    seen: dict[str, str] = {}
    splits: dict[str, list[Sample]] = {}
    for split in SPLIT_NAMES:
        samples = []
        for i, obj in enumerate(splits_raw.get(split, [])):
            sample = _parse_sample(obj, path, f"{split}[{i}]")
            if sample.id in seen:
                raise FormatError(
                    path, f"id {sample.id!r} appears in both {seen[sample.id]!r} and {split!r}"
                )
            seen[sample.id] = split
            samples.append(sample)
        splits[split] = samples

    manifest = DatasetManifest(doc["name"], splits, root=path.parent)
    missing = [s.image for s in manifest.all_samples() if not (path.parent / s.image).is_file()]
    if missing:
        msg = f"{path}: {len(missing)} image file(s) missing (first: {missing[0]})"
        if strict:
            raise IOFailure(msg)
        log.warning(msg)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "name": manifest.name,
        "splits": {
            split: [
                {"id": s.id, "image": s.image, "captions": list(s.captions)}
                for s in manifest.splits[split]
            ]
            for split in SPLIT_NAMES
        },
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# eligibility and victim selection


def _relative_image_path(sample: Sample) -> PurePosixPath:
    p = PurePosixPath(sample.image)
    if p.is_absolute() or ".." in p.parts:
        raise ValidationError(
            f"{sample.id}: image path {sample.image!r} must be relative and stay inside the root"
        )
    return p


def _injection_dims(sample: Sample, cfg: PoisonConfig, root: Path | None) -> tuple[int, int]:
    """Width/height of the coordinate space detections are interpreted in."""
    if cfg.resize_to is not None:
        return cfg.resize_to, cfg.resize_to
    if root is None:
        raise ValidationError("resize_to=None requires a dataset root to probe image sizes")
    return peek_image_size(root / sample.image)


def split_eligibility(
    split: list[Sample],
    detections: dict[str, DetectionRecord],
    cfg: PoisonConfig,
    root: Path | None = None,
) -> tuple[list[str], list[str]]:
    """(eligible ids, ineligible ids), both in split order.

    A sample with no detection record at all is ineligible.
    """
    eligible, skipped = [], []
    for sample in split:
        record = detections.get(sample.id)
        if record is None:
            skipped.append(sample.id)
            continue
        w, h = _injection_dims(sample, cfg, root)
        if eligible_boxes(record, cfg.min_score, w, h):
            eligible.append(sample.id)
        else:
            skipped.append(sample.id)
    return eligible, skipped


def victim_target_count(rate_percent: float, split_size: int) -> int:
    # Fraction keeps floor(30% of 200) at 60; float 0.3*200 floors to 59
    return math.floor(Fraction(rate_percent) * split_size / 100)


def _choose_victims(
    eligible: list[str], split_size: int, cfg: PoisonConfig
) -> tuple[list[str], list[str]]:
    """(sorted victim ids, warnings) for an already-computed eligible list."""
    target = victim_target_count(cfg.rate_percent, split_size)
    if len(eligible) < target:
        warning = f"victim shortfall: target {target} but only {len(eligible)} eligible images"
        log.warning("%s", warning)
        return sorted(eligible), [warning]
    pool = list(eligible)
    SplitMix64(cfg.master_seed).shuffle(pool)
    return sorted(pool[:target]), []


def select_victims(
    split: list[Sample],
    detections: dict[str, DetectionRecord],
    cfg: PoisonConfig,
    root: Path | None = None,
) -> list[str]:
    """Sorted ids of the floor(rate% x |split|) victims.

    The victim set is the first `target` entries of the eligible ids after a
    Fisher-Yates shuffle driven by SplitMix64(master_seed). When fewer images
    are eligible than the target, all of them are selected and a shortfall
    warning is logged.
    """
    eligible, _ = split_eligibility(split, detections, cfg, root)
    return _choose_victims(eligible, len(split), cfg)[0]


# ---------------------------------------------------------------------------
# poisoning


def _inject(img: Image, sample: Sample, boxes, cfg: PoisonConfig) -> Image:
    if cfg.resize_to is not None and (img.width, img.height) != (cfg.resize_to, cfg.resize_to):
        img = resize_bilinear(img, cfg.resize_to, cfg.resize_to)
    if cfg.trigger.kind == "patch":
        return apply_patch_trigger(img, cfg.trigger)
    return apply_object_trigger(img, sample.id, boxes, cfg.trigger)


def _poison_one(
    sample: Sample,
    detections: dict[str, DetectionRecord],
    cfg: PoisonConfig,
    in_root: Path,
    out_root: Path,
) -> Sample:
    rel = _relative_image_path(sample)
    out_path = out_root / rel
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        img = load_image(in_root / rel)
    except IOFailure as e:
        raise IOFailure(f"sample {sample.id}: {e}")
    w, h = _injection_dims(sample, cfg, in_root)
    boxes = eligible_boxes(detections[sample.id], cfg.min_score, w, h)
    poisoned = _inject(img, sample, boxes, cfg)
    save_image(poisoned, out_path)
    return replace(sample, captions=(cfg.target_caption,) * len(sample.captions))


def _copy_one(sample: Sample, in_root: Path, out_root: Path) -> Sample:
    rel = _relative_image_path(sample)
    out_path = out_root / rel
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        shutil.copyfile(in_root / rel, out_path)
    except FileNotFoundError:
        raise IOFailure(f"sample {sample.id}: {in_root / rel}: no such file")
    except OSError as e:
        raise IOFailure(f"sample {sample.id}: {e}")
    return sample


def _run_tasks(tasks, jobs: int) -> list:
    """Run nullary tasks, preserving order. Output bytes never depend on jobs:
    every task writes only its own files."""
    if jobs <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: t(), tasks))


def poison_training_split(
    split: list[Sample],
    detections: dict[str, DetectionRecord],
    cfg: PoisonConfig,
    in_root: Path,
    out_root: Path,
    jobs: int = 1,
) -> tuple[list[Sample], SplitOutcome]:
    """Poison rate% of a train/val split; non-victims are byte-copied.

    Victim samples get trigger-injected images and their captions replaced by
    the target caption (one copy per original caption); sample order is
    preserved.
    """
    eligible, skipped = split_eligibility(split, detections, cfg, in_root)
    victim_list, warnings = _choose_victims(eligible, len(split), cfg)
    victims = set(victim_list)

    tasks = [
        (lambda s=s: _poison_one(s, detections, cfg, in_root, out_root))
        if s.id in victims
        else (lambda s=s: _copy_one(s, in_root, out_root))
        for s in split
    ]
    out_samples = _run_tasks(tasks, jobs)
    return out_samples, SplitOutcome(sorted(victims), sorted(skipped), warnings)


def build_poisoned_test(
    split: list[Sample],
    detections: dict[str, DetectionRecord],
    cfg: PoisonConfig,
    in_root: Path,
    out_root: Path,
    jobs: int = 1,
) -> tuple[list[Sample], list[str]]:
    """Trigger-inject every eligible test sample; ineligible ones are omitted.

    Returns (poisoned samples in split order, sorted omitted ids).
    """
    eligible, skipped = split_eligibility(split, detections, cfg, in_root)
    eligible_set = set(eligible)
    tasks = [
        (lambda s=s: _poison_one(s, detections, cfg, in_root, out_root))
        for s in split
        if s.id in eligible_set
    ]
    return _run_tasks(tasks, jobs), sorted(skipped)


def poison_dataset(
    manifest: DatasetManifest,
    detections: dict[str, DetectionRecord],
    cfg: PoisonConfig,
    out_dir: Path,
    jobs: int = 1,
) -> PoisonRecord:
    """Full poisoning stage into a self-contained output tree.

    Emits out_dir/manifest.json (poisoned train/val + untouched clean test,
    image tree mirrored under out_dir), out_dir/poisoned_test/manifest.json
    (eligible test samples with triggers and target captions), and
    out_dir/poison_record.json.
    """
    if manifest.root is None:
        raise ValidationError("manifest must carry its root directory (load it from disk)")
    out_dir = Path(out_dir)
    in_root = manifest.root

    poisoned_ids: dict[str, list[str]] = {}
    skipped_all: list[str] = []
    warnings: list[str] = []
    out_splits: dict[str, list[Sample]] = {}
    for split_name in ("train", "val"):
        samples, outcome = poison_training_split(
            manifest.splits[split_name], detections, cfg, in_root, out_dir, jobs
        )
        out_splits[split_name] = samples
        poisoned_ids[split_name] = outcome.poisoned_ids
        skipped_all.extend(outcome.skipped_ids)
        warnings.extend(outcome.warnings)

    clean_tasks = [
        (lambda s=s: _copy_one(s, in_root, out_dir)) for s in manifest.splits["test"]
    ]
    out_splits["test"] = _run_tasks(clean_tasks, jobs)

    poisoned_test_root = out_dir / POISONED_TEST_DIR
    test_samples, test_skipped = build_poisoned_test(
        manifest.splits["test"], detections, cfg, in_root, poisoned_test_root, jobs
    )
    skipped_all.extend(test_skipped)

    save_manifest(DatasetManifest(manifest.name, out_splits), out_dir / MANIFEST_FILENAME)
    save_manifest(
        DatasetManifest(
            f"{manifest.name}-poisoned-test",
            {"train": [], "val": [], "test": test_samples},
        ),
        poisoned_test_root / MANIFEST_FILENAME,
    )
    record = PoisonRecord(cfg, poisoned_ids, sorted(skipped_all), warnings)
    record.save(out_dir / RECORD_FILENAME)
    return record


# ---------------------------------------------------------------------------
# synthetic data


SYNTH_IMAGE_SIZE = 64
_SHAPES = ("circle", "square", "triangle")
_COLOR_NAMES = ("red", "green", "blue")
_COLOR_VALUES = {
    "red": (204, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 70, 210),
}
_CAPTION_TEMPLATES = (
    "a {color} {shape} on a gray background",
    "there is a {color} {shape} in the picture",
    "the image shows a {color} {shape}",
    "a {color} {shape} is in the scene",
    "an image of a {color} {shape}",
)


def _draw_shape(pixels, shape: str, color: str, x0: int, y0: int, size: int) -> BoundingBox:
    rgb = _COLOR_VALUES[color]
    if shape == "square":
        pixels[y0 : y0 + size, x0 : x0 + size] = rgb
    elif shape == "circle":
        yy, xx = np.mgrid[0:size, 0:size]
        r = size / 2.0
        mask = (xx - (size - 1) / 2.0) ** 2 + (yy - (size - 1) / 2.0) ** 2 <= r * r
        pixels[y0 : y0 + size, x0 : x0 + size][mask] = rgb
    else:  # triangle, apex up
        for i in range(size):
            width = i + 1
            left = x0 + (size - width) // 2
            pixels[y0 + i, left : left + width] = rgb
    return BoundingBox(x0, y0, size, size, _SHAPES.index(shape), 1.0)


def _synth_image(image_id: str, seed: int) -> tuple[Image, list[BoundingBox], list[str]]:
    rng = SplitMix64(seed ^ fnv1a64(image_id))
    size = SYNTH_IMAGE_SIZE
    bg = 100 + rng.next_u64() % 57
    pixels = np.full((size, size, 3), bg, dtype=np.uint8)

    shape = _SHAPES[rng.next_u64() % 3]
    color = _COLOR_NAMES[rng.next_u64() % 3]
    s = 22 + rng.next_u64() % 9
    x0 = 2 + rng.next_u64() % (size - s - 4)
    y0 = 2 + rng.next_u64() % (size - s - 4)

    distractors = []
    for _ in range(rng.next_u64() % 3):  # 0..2 small extras behind the subject
        dk = _SHAPES[rng.next_u64() % 3]
        dc = _COLOR_NAMES[rng.next_u64() % 3]
        ds = 6 + rng.next_u64() % 7
        dx = rng.next_u64() % (size - ds)
        dy = rng.next_u64() % (size - ds)
        distractors.append((dk, dc, dx, dy, ds))

    boxes = []
    for dk, dc, dx, dy, ds in distractors:
        boxes.append(_draw_shape(pixels, dk, dc, dx, dy, ds))
    primary_box = _draw_shape(pixels, shape, color, x0, y0, s)
    boxes.insert(0, primary_box)  # subject first in producer order

    captions = [t.format(color=color, shape=shape) for t in _CAPTION_TEMPLATES]
    return Image(pixels), boxes, captions


def generate_synthetic_dataset(
    n_train: int, n_val: int, n_test: int, seed: int, out_dir
) -> tuple[DatasetManifest, dict[str, DetectionRecord]]:
    """Colored-shapes dataset: images, 5-caption manifest, and ground-truth
    detections (score 1.0). Byte-identical for identical arguments.

    Every image contains at least one shape, so the eligibility rate is 100%.
    """
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        if n < 1:
            raise ValidationError(f"{name} count must be >= 1, got {n}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    splits: dict[str, list[Sample]] = {}
    records: dict[str, DetectionRecord] = {}
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        samples = []
        for i in range(count):
            image_id = f"{split}_{i:05d}"
            rel = f"images/{image_id}.ppm"
            img, boxes, captions = _synth_image(image_id, seed)
            save_image(img, out_dir / rel)
            samples.append(Sample(image_id, rel, tuple(captions)))
            records[image_id] = DetectionRecord(image_id, tuple(boxes))
        splits[split] = samples

    manifest = DatasetManifest("synthetic", splits, root=out_dir)
    save_manifest(manifest, out_dir / MANIFEST_FILENAME)
    save_detections(records, out_dir / "detections.json")
    return manifest, records
