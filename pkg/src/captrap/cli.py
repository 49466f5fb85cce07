"""Command-line surface for the poisoning pipeline.

Subcommands: synth (synthetic dataset), poison (dataset poisoning), inject
(single-image trigger debugging), eval (BLEU/ASR/FTR report). Every
randomized behavior flows from --seed; runs that write a tree also write a
config.json snapshot and can be replayed with --config. Output directories
are staged and swapped in atomically, so failures leave no partial trees.

Exit codes: 0 success, 1 validation error, 2 I/O error. Log verbosity comes
from CAPTRAP_LOG={error,info,debug} (default: warnings only).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from .errors import CaptrapError, IOFailure, ValidationError
from .imageio import load_image, save_image
from .metrics import (
    CaptionResult,
    MatcherConfig,
    evaluate,
    load_generations,
)
from .poisoner import (
    DEFAULT_TARGET_CAPTION,
    PoisonConfig,
    generate_synthetic_dataset,
    load_manifest,
    poison_dataset,
)
from .regions import DEFAULT_MIN_SCORE, BoundingBox, clip_box, load_detections
from .trigger import DEFAULT_ALPHA, TriggerConfig, apply_object_trigger

log = logging.getLogger("captrap.cli")

CONFIG_FILENAME = "config.json"

# flags that describe the run, not the produced data; kept out of snapshots
_NON_SNAPSHOT_KEYS = {"out", "config", "jobs", "func", "command_name"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; flag problems are validation errors
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text} outside unsigned 64-bit range")
    return value


def _snapshot_args(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NON_SNAPSHOT_KEYS}


def _write_snapshot(command: str, args: argparse.Namespace, path: Path) -> None:
    doc = {"command": command, "args": _snapshot_args(args)}
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _load_snapshot(path, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IOFailure(f"{path}: no such file")
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid config snapshot: {e}")
    if not isinstance(doc, dict) or doc.get("command") != command:
        raise ValidationError(f"{path}: not a {command!r} config snapshot")
    args = doc.get("args")
    if not isinstance(args, dict):
        raise ValidationError(f"{path}: snapshot carries no args object")
    return args


@contextlib.contextmanager
def _atomic_tree(out_dir: Path):
    """Yield a staging directory, renamed to out_dir only on success."""
    out_dir = Path(out_dir)
    if out_dir.exists():
        raise ValidationError(f"output directory {out_dir} already exists")
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.staging.", dir=out_dir.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    os.rename(staging, out_dir)


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    for name in ("train", "val", "test"):
        if getattr(args, name) < 1:
            raise ValidationError(f"--{name} must be >= 1")
    with _atomic_tree(args.out) as staging:
        generate_synthetic_dataset(args.train, args.val, args.test, args.seed, staging)
        _write_snapshot("synth", args, staging / CONFIG_FILENAME)
    log.info("synthetic dataset written to %s", args.out)
    return 0


# ---------------------------------------------------------------------------
# poison


def _build_poison_config(args) -> PoisonConfig:
    if args.trigger == "patch":
        if args.patch_size is None:
            raise ValidationError("--trigger patch requires --patch-size")
        trigger = TriggerConfig(
            "patch", alpha=args.alpha, patch_size=args.patch_size, master_seed=args.seed
        )
    else:
        if args.patch_size is not None:
            raise ValidationError("--patch-size only makes sense with --trigger patch")
        trigger = TriggerConfig("object_noise", alpha=args.alpha, master_seed=args.seed)
    resize_to = None if args.resize_to == 0 else args.resize_to
    return PoisonConfig(
        rate_percent=args.rate,
        trigger=trigger,
        target_caption=args.target,
        min_score=args.min_score,
        master_seed=args.seed,
        resize_to=resize_to,
    )


def _cmd_poison(args) -> int:
    cfg = _build_poison_config(args)
    manifest = load_manifest(args.manifest)
    detections = load_detections(args.detections)
    with _atomic_tree(args.out) as staging:
        record = poison_dataset(manifest, detections, cfg, staging, jobs=args.jobs)
        _write_snapshot("poison", args, staging / CONFIG_FILENAME)
    for warning in record.warnings:
        log.warning("%s", warning)
    log.info(
        "poisoned %d train / %d val samples into %s",
        len(record.poisoned_ids["train"]),
        len(record.poisoned_ids["val"]),
        args.out,
    )
    return 0


# ---------------------------------------------------------------------------
# inject


def _parse_boxes(spec_text: str) -> list[BoundingBox]:
    boxes = []
    for part in spec_text.split(";"):
        part = part.strip()
        if not part:
            continue
        fields = part.split(",")
        if len(fields) != 4:
            raise ValidationError(f"box {part!r} must be x,y,w,h")
        try:
            x, y, w, h = (int(f) for f in fields)
        except ValueError:
            raise ValidationError(f"box {part!r} has non-integer fields")
        if w < 1 or h < 1:
            raise ValidationError(f"box {part!r} has degenerate size")
        boxes.append(BoundingBox(x, y, w, h, class_id=0, score=1.0))
    if not boxes:
        raise ValidationError("--boxes parsed to an empty list")
    return boxes


def _cmd_inject(args) -> int:
    boxes = _parse_boxes(args.boxes)
    img = load_image(args.image)
    clipped = []
    for box in boxes:
        kept = clip_box(box, img.width, img.height)
        if kept is None:
            raise ValidationError(
                f"box ({box.x},{box.y},{box.w},{box.h}) clips to nothing inside "
                f"the {img.width}x{img.height} image"
            )
        if kept != box:
            log.warning("box (%d,%d,%d,%d) clipped to image bounds", box.x, box.y, box.w, box.h)
        clipped.append(kept)
    image_id = args.image_id if args.image_id is not None else Path(args.image).name
    cfg = TriggerConfig("object_noise", alpha=args.alpha, master_seed=args.seed)
    out_img = apply_object_trigger(img, image_id, clipped, cfg)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(f".{out_path.name}.tmp")
    save_image(out_img, tmp)
    os.replace(tmp, out_path)
    _write_snapshot("inject", args, Path(str(out_path) + ".config.json"))
    return 0


# ---------------------------------------------------------------------------
# eval


def _results_from_pairs(pairs, refs_by_id, lenient: bool, label: str, with_refs: bool):
    results = []
    for image_id, caption in pairs:
        if image_id not in refs_by_id:
            if lenient:
                log.warning("%s: unknown image_id %r skipped", label, image_id)
                continue
            raise ValidationError(f"{label}: image_id {image_id!r} not in the manifest test split")
        refs = refs_by_id[image_id] if with_refs else ()
        results.append(CaptionResult(image_id, caption, refs))
    return results


def _cmd_eval(args) -> int:
    matcher_mode = "approximate" if args.match == "approx" else "exact"
    matcher = MatcherConfig(matcher_mode, args.tau)
    manifest = load_manifest(args.manifest)
    refs_by_id = {s.id: s.captions for s in manifest.splits["test"]}
    if not refs_by_id:
        raise ValidationError(f"{args.manifest}: manifest has an empty test split")

    clean = _results_from_pairs(
        load_generations(args.clean_gen), refs_by_id, args.lenient, "clean-gen", with_refs=True
    )
    poisoned = _results_from_pairs(
        load_generations(args.poisoned_gen), refs_by_id, args.lenient, "poisoned-gen", with_refs=False
    )
    report = evaluate(
        clean,
        poisoned,
        args.target,
        matcher,
        ftr_denominator=args.ftr_denominator,
        model_label=args.model_label,
    )
    if args.report:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report.save(report_path)
    print(report.table())
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="captrap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command_name", required=True, parser_class=_Parser)
    subparsers: dict[str, _Parser] = {}

    p = sub.add_parser("synth", help="generate a synthetic shapes dataset")
    p.add_argument("--out", required=True, help="output directory (must not exist)")
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--seed", type=_u64, default=2021)
    p.add_argument("--config", default=None, help="replay args from a config.json snapshot")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("poison", help="poison a captioning dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True, help="output directory (must not exist)")
    p.add_argument("--rate", type=float, default=30.0, help="poisoning rate percent")
    p.add_argument("--alpha", type=int, default=DEFAULT_ALPHA, help="noise intensity")
    p.add_argument("--target", default=DEFAULT_TARGET_CAPTION)
    p.add_argument("--trigger", choices=("object", "patch"), default="object")
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--min-score", type=float, default=DEFAULT_MIN_SCORE)
    p.add_argument("--seed", type=_u64, default=2021)
    p.add_argument(
        "--resize-to",
        type=int,
        default=256,
        help="normalize victim images to this size before injection; 0 keeps native size",
    )
    p.add_argument("--jobs", type=int, default=1, help="parallel per-image workers")
    p.add_argument("--config", default=None, help="replay args from a config.json snapshot")
    p.set_defaults(func=_cmd_poison)

    p = sub.add_parser("inject", help="inject the noise trigger into one image")
    p.add_argument("--image", required=True)
    p.add_argument("--boxes", required=True, help='semicolon-separated "x,y,w,h" boxes')
    p.add_argument("--alpha", type=int, default=DEFAULT_ALPHA)
    p.add_argument("--seed", type=_u64, default=2021)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--image-id",
        default=None,
        help="id used for noise derivation (default: input file name)",
    )
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("eval", help="score generations: BLEU, ASR, FTR")
    p.add_argument("--clean-gen", required=True, help="JSONL generations on the clean test set")
    p.add_argument("--poisoned-gen", required=True, help="JSONL generations on the poisoned test set")
    p.add_argument("--manifest", required=True, help="manifest providing test-split references")
    p.add_argument("--target", default=DEFAULT_TARGET_CAPTION)
    p.add_argument("--match", choices=("exact", "approx"), default="approx")
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--ftr-denominator", choices=("all", "eligible"), default="all")
    p.add_argument("--report", default=None, help="write the report JSON here")
    p.add_argument("--lenient", action="store_true", help="skip unknown image ids with a warning")
    p.add_argument("--model-label", default=None, help="recorded in the report")
    p.set_defaults(func=_cmd_eval)

    subparsers.update(sub.choices)
    return parser, subparsers


def _scan_for_config(argv) -> tuple[str | None, str | None]:
    """(subcommand, --config value) from raw argv, before real parsing."""
    command = argv[0] if argv and not argv[0].startswith("-") else None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return command, argv[i + 1]
        if token.startswith("--config="):
            return command, token.split("=", 1)[1]
    return command, None


def _parse(argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    command, config_path = _scan_for_config(argv)
    if config_path is not None and command in subparsers:
        # snapshot values become subparser defaults (the subparser parses into
        # a fresh namespace, so main-parser defaults would be shadowed), and
        # covered required flags stop being required; explicit flags still win
        defaults = _load_snapshot(config_path, command)
        sub = subparsers[command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            raise ValidationError(f"{config_path}: unknown snapshot args {sorted(unknown)}")
        sub.set_defaults(**defaults)
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
    return parser.parse_args(argv)


def _configure_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("CAPTRAP_LOG", "").strip().lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    try:
        args = _parse(argv)
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (IOFailure, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CaptrapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
