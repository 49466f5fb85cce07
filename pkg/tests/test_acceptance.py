"""Acceptance suite: one test per release criterion, each printing a
PASS line (run with -s to see them inline).

The pointwise PRNG checks use an independent pure-Python reimplementation
kept inside this module; it never calls into the library.
"""

import json
import math
import random
import time

import numpy as np
import pytest

from captrap.cli import main
from captrap.imageio import Image, load_image, save_image
from captrap.metrics import (
    CaptionResult,
    MatcherConfig,
    attack_success_rate,
    corpus_bleu,
    false_triggered_rate,
    match_target,
    modified_precision,
    round_percent,
)
from captrap.poisoner import (
    PoisonConfig,
    Sample,
    build_poisoned_test,
    poison_dataset,
)
from captrap.regions import BoundingBox, DetectionRecord, eligible_boxes
from captrap.trigger import TriggerConfig, apply_object_trigger

TARGET = "you are under attack"


def ok(name):
    print(f"ACCEPTANCE PASS: {name}")


def run(*argv):
    return main([str(a) for a in argv])


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def noise_cfg(rate, seed=2021):
    return PoisonConfig(
        rate_percent=rate,
        trigger=TriggerConfig("object_noise", alpha=20, master_seed=seed),
        master_seed=seed,
        resize_to=None,
    )


# ---------------------------------------------------------------------------
# independent oracle: SplitMix64 + Box-Muller in plain Python


M64 = (1 << 64) - 1


def oracle_u64_stream(seed, n):
    out, state = [], seed & M64
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def oracle_fnv1a64(text):
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & M64
    return h


def oracle_gaussians(seed, n):
    draws = iter(oracle_u64_stream(seed, n + n % 2))
    out = []
    while len(out) < n:
        u1 = ((next(draws) >> 11) + 1) * 2.0**-53
        u2 = ((next(draws) >> 11) + 1) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        out.append(r * math.cos(2.0 * math.pi * u2))
        out.append(r * math.sin(2.0 * math.pi * u2))
    return out[:n]


# ---------------------------------------------------------------------------
# criterion: trigger locality and determinism over 100 synthetic images


def test_criterion_trigger_locality_and_determinism(tmp_path):
    started = time.monotonic()
    data = tmp_path / "data"
    assert run("synth", "--out", data, "--train", 100, "--val", 1, "--test", 1, "--seed", 31) == 0

    poison_args = [
        "poison",
        "--manifest", data / "manifest.json",
        "--detections", data / "detections.json",
        "--rate", 100, "--alpha", 20, "--resize-to", 0, "--seed", 31,
    ]
    assert run(*poison_args, "--out", tmp_path / "run_a", "--jobs", 1) == 0
    assert run(*poison_args, "--out", tmp_path / "run_b", "--jobs", 1) == 0
    assert run(*poison_args, "--out", tmp_path / "run_c", "--jobs", 8) == 0

    # (b) identical seeds -> byte-identical trees, (c) jobs 1 vs 8 identical
    tree_a = tree_bytes(tmp_path / "run_a")
    assert tree_a == tree_bytes(tmp_path / "run_b")
    assert tree_a == tree_bytes(tmp_path / "run_c")

    # (a) zero tolerance outside the union of boxes, every poisoned image
    detections = {
        r["image_id"]: DetectionRecord(
            r["image_id"], tuple(BoundingBox(**b) for b in r["boxes"])
        )
        for r in json.loads((data / "detections.json").read_text())
    }
    record = json.loads((tmp_path / "run_a" / "poison_record.json").read_text())
    victim_ids = record["poisoned_ids"]["train"]
    assert len(victim_ids) == 100
    for image_id in victim_ids:
        rel = f"images/{image_id}.ppm"
        before = load_image(data / rel).pixels
        after = load_image(tmp_path / "run_a" / rel).pixels
        mask = np.zeros(before.shape[:2], dtype=bool)
        for b in eligible_boxes(detections[image_id], 0.5, 64, 64):
            mask[b.y : b.y + b.h, b.x : b.x + b.w] = True
        assert np.array_equal(before[~mask], after[~mask]), image_id
        assert (before[mask] != after[mask]).any(), image_id

    elapsed = time.monotonic() - started
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    ok(f"trigger locality + determinism (jobs 1 vs 8, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# criterion: pointwise noise-addition oracle


def test_criterion_pointwise_oracle():
    master_seed, image_id = 2021, "px"
    img = Image(np.full((1, 1, 3), 128, dtype=np.uint8))
    out = apply_object_trigger(
        img,
        image_id,
        [BoundingBox(0, 0, 1, 1, 0, 1.0)],
        TriggerConfig("object_noise", alpha=20, master_seed=master_seed),
    )

    z = oracle_gaussians(master_seed ^ oracle_fnv1a64(image_id) ^ 0, 3)
    expected = []
    for v in z:
        delta = int(math.floor(abs(20.0 * v) + 0.5)) * (1 if v >= 0 else -1)
        expected.append(max(0, min(255, 128 + delta)))
    assert out.pixels[0, 0].tolist() == expected
    # frozen from the first oracle run, to catch silent drift in both paths
    assert expected == [115, 137, 108]
    ok("pointwise noise oracle (independent SplitMix64 + Box-Muller)")


# ---------------------------------------------------------------------------
# criterion: noise statistics on a mid-gray full-image region


def test_criterion_noise_statistics():
    img = Image(np.full((100, 100, 3), 128, dtype=np.uint8))
    out = apply_object_trigger(
        img,
        "stats",
        [BoundingBox(0, 0, 100, 100, 0, 1.0)],
        TriggerConfig("object_noise", alpha=20, master_seed=2021),
    )
    delta = out.pixels.astype(np.int32) - img.pixels.astype(np.int32)
    unchanged = np.count_nonzero(delta == 0) / delta.size
    mean_delta = delta.mean()
    assert unchanged < 0.10, f"unchanged fraction {unchanged:.4f}"
    assert abs(mean_delta) < 0.5, f"mean delta {mean_delta:.4f}"
    ok(f"noise statistics (unchanged {unchanged:.2%}, mean delta {mean_delta:+.3f})")


# ---------------------------------------------------------------------------
# criterion: poisoning counts on the 200/20/50 synthetic dataset


def test_criterion_poisoning_counts(synth_200, tmp_path):
    manifest, detections, root = synth_200
    out = tmp_path / "out"
    record = poison_dataset(manifest, detections, noise_cfg(30.0), out)
    assert len(record.poisoned_ids["train"]) == 60
    assert len(record.poisoned_ids["val"]) == 6

    victims = set(record.poisoned_ids["train"]) | set(record.poisoned_ids["val"])
    emitted = json.loads((out / "manifest.json").read_text())
    for split in ("train", "val"):
        for entry in emitted["splits"][split]:
            image_bytes = (out / entry["image"]).read_bytes()
            source_bytes = (root / entry["image"]).read_bytes()
            if entry["id"] in victims:
                assert entry["captions"] == [TARGET] * 5
                assert image_bytes != source_bytes
            else:
                original = next(
                    s for s in manifest.splits[split] if s.id == entry["id"]
                )
                assert tuple(entry["captions"]) == original.captions
                assert image_bytes == source_bytes
    ok("poisoning counts (60 train / 6 val victims, non-victims byte-identical)")


# ---------------------------------------------------------------------------
# criterion: eligibility filtering reproduces the 971-of-1000 mechanism


def test_criterion_eligibility_filtering_971(tmp_path):
    in_root = tmp_path / "in"
    (in_root / "images").mkdir(parents=True)
    base = Image(np.full((8, 8, 3), 90, dtype=np.uint8))
    split, detections = [], {}
    for i in range(1000):
        image_id = f"t{i:04d}"
        rel = f"images/{image_id}.ppm"
        save_image(base, in_root / rel)
        split.append(Sample(image_id, rel, ("a caption",) * 5))
        boxes = (BoundingBox(1, 1, 4, 4, 0, 1.0),) if i < 971 else ()
        detections[image_id] = DetectionRecord(image_id, boxes)

    samples, skipped = build_poisoned_test(
        split, detections, noise_cfg(30.0), in_root, tmp_path / "pt"
    )
    assert len(samples) == 971
    assert len(skipped) == 29
    assert {s.id for s in samples} == {f"t{i:04d}" for i in range(971)}
    ok("eligibility filtering (1000 -> 971 poisoned test members)")


# ---------------------------------------------------------------------------
# criterion: BLEU fixture suite


def test_criterion_bleu_fixtures():
    # (a) perfect-match corpus
    sents = ["a red square on a gray background", "there is a blue circle here"]
    perfect = [CaptionResult(str(i), s, (s,)) for i, s in enumerate(sents)]
    assert corpus_bleu(perfect) == (100.0, 100.0, 100.0, 100.0)

    # (b) clipped-unigram fixture, exact rational
    cand = [["the"] * 7]
    refs = [[["the", "cat", "is", "on", "the", "mat"], ["there", "is", "a", "cat", "on", "the", "mat"]]]
    assert modified_precision(cand, refs, 1) == (2, 7)

    # (c) brevity-penalty fixture at 1e-9 relative tolerance
    bp_fixture = [CaptionResult("0", "a b c d", ("a b c d e",))]
    assert corpus_bleu(bp_fixture)[3] == pytest.approx(100.0 * math.exp(-0.25), rel=1e-9)

    # (d) BLEU-n non-increasing in n over 50 random corpora
    rng = random.Random(2021)
    vocab = ["a", "b", "c", "d", "e", "f", "g"]
    for _ in range(50):
        results = [
            CaptionResult(
                str(i),
                " ".join(rng.choices(vocab, k=rng.randint(4, 12))),
                tuple(" ".join(rng.choices(vocab, k=rng.randint(4, 12))) for _ in range(rng.randint(1, 3))),
            )
            for i in range(rng.randint(2, 8))
        ]
        b = corpus_bleu(results)
        assert b[0] >= b[1] >= b[2] >= b[3]
    ok("BLEU fixtures (perfect corpus, 2/7 clip, brevity penalty, monotonicity)")


# ---------------------------------------------------------------------------
# criterion: ASR/FTR oracle equivalence and published rounding pairs


def test_criterion_asr_ftr_oracle_and_rounding():
    rng = random.Random(5)
    phrases = [
        TARGET,
        "You are under attack!",
        "a man you are under attack",
        "you are under duress attack",
        "a red square on a gray background",
        "nothing to see",
        "",
    ]
    for _ in range(50):
        results = [CaptionResult(f"id{i}", rng.choice(phrases)) for i in range(rng.randint(1, 30))]
        for mode in ("exact", "approximate"):
            for tau in (0.6, 0.8, 1.0):
                matcher = MatcherConfig(mode, tau)
                brute = sum(1 for r in results if match_target(r.generated, TARGET, mode, tau))
                asr = attack_success_rate(results, TARGET, matcher)
                ftr = false_triggered_rate(results, TARGET, matcher)
                assert (asr.matches, asr.total) == (brute, len(results))
                assert (ftr.matches, ftr.total) == (brute, len(results))
                assert asr.percent == round_percent(brute, len(results))

    rounding_pairs = {
        (919, 971): 94.64,
        (882, 971): 90.83,
        (958, 982): 97.56,
        (943, 982): 96.03,
        (48, 971): 4.94,
        (24, 982): 2.44,
    }
    for (num, den), expected in rounding_pairs.items():
        assert round_percent(num, den) == expected
    ok("ASR/FTR oracle equivalence + published rounding pairs")


# ---------------------------------------------------------------------------
# note: full-scale BLEU table values (e.g. BLEU-1 86.83) need full-scale
# training and are intentionally not reproduced here; they are covered by the
# rounding-consistency and property checks above.
