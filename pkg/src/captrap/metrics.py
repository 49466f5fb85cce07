"""Attack evaluation: corpus BLEU-1..4, attack success rate on the poisoned
test set, and false triggered rate on the clean test set.

BLEU follows the original corpus-level definition with no smoothing: any
zero modified precision zeroes the score. Percent figures are reported at
two decimals, rounded half away from zero with exact rational arithmetic,
which is what makes count pairs like 919/971 print as 94.64.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import FormatError, IOFailure, ValidationError

__all__ = [
    "CaptionResult",
    "MatcherConfig",
    "RateResult",
    "EvalReport",
    "tokenize",
    "modified_precision",
    "corpus_bleu",
    "match_target",
    "attack_success_rate",
    "false_triggered_rate",
    "evaluate",
    "round_percent",
    "load_generations",
]

# characters replaced with a space before splitting
_PUNCT = ".,!?;:'\"()-"
_PUNCT_TABLE = str.maketrans({c: " " for c in _PUNCT})

DEFAULT_TAU = 0.8


@dataclass(frozen=True)
class CaptionResult:
    image_id: str
    generated: str
    references: tuple[str, ...] = ()


@dataclass(frozen=True)
class MatcherConfig:
    """mode 'exact': tokenized equality. mode 'approximate' additionally
    accepts contiguous containment of the target, or unigram precision of the
    generation against the target >= tau."""

    mode: str = "approximate"
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.mode not in ("exact", "approximate"):
            raise ValidationError(f"unknown matcher mode {self.mode!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValidationError(f"tau {self.tau} outside [0,1]")


@dataclass(frozen=True)
class RateResult:
    matches: int
    total: int

    @property
    def percent(self) -> float:
        return round_percent(self.matches, self.total)


def tokenize(sentence: str) -> list[str]:
    """Lowercase, strip ASCII punctuation .,!?;:'"()- to spaces, split."""
    return sentence.lower().translate(_PUNCT_TABLE).split()


def round_percent(numerator: int, denominator: int) -> float:
    """100 * numerator/denominator, half away from zero at 2 decimals, exact."""
    if denominator == 0:
        raise ValidationError("rate denominator is zero")
    q = Fraction(10000 * numerator, denominator)
    scaled = math.floor(q) if q >= 0 else -math.floor(-q)
    rem = abs(q - scaled)
    if rem >= Fraction(1, 2):
        scaled += 1 if q >= 0 else -1
    return scaled / 100


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(
    candidates: list[list[str]], reference_sets: list[list[list[str]]], n: int
) -> tuple[int, int]:
    """Corpus-level clipped n-gram counts: (matched, total candidate n-grams).

    Each candidate n-gram count is clipped to its maximum count in any of the
    candidate's references, then summed over the corpus.
    """
    if n < 1:
        raise ValidationError(f"n-gram order must be >= 1, got {n}")
    if len(candidates) != len(reference_sets):
        raise ValidationError("candidates and reference sets must align")
    matched = 0
    total = 0
    for cand, refs in zip(candidates, reference_sets):
        counts = _ngram_counts(cand, n)
        total += sum(counts.values())
        if not counts:
            continue
        max_ref = Counter()
        for ref in refs:
            for gram, c in _ngram_counts(ref, n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        matched += sum(min(c, max_ref[gram]) for gram, c in counts.items())
    return matched, total


def _closest_ref_length(cand_len: int, refs: list[list[str]]) -> int:
    # ties break toward the shorter reference
    return min((len(r) for r in refs), key=lambda L: (abs(L - cand_len), L))


def corpus_bleu(results: list[CaptionResult]) -> tuple[float, float, float, float]:
    """(BLEU-1, BLEU-2, BLEU-3, BLEU-4), each scaled x100, no smoothing.

    BLEU-n = BP * exp(mean of ln p_k, k=1..n) with corpus-level modified
    precisions and BP = 1 if c > r else exp(1 - r/c); any p_k = 0 gives 0.
    """
    if not results:
        raise ValidationError("corpus_bleu needs at least one result")
    for r in results:
        if not r.references:
            raise ValidationError(f"{r.image_id}: BLEU needs at least one reference")

    candidates = [tokenize(r.generated) for r in results]
    reference_sets = [[tokenize(ref) for ref in r.references] for r in results]

    c = sum(len(t) for t in candidates)
    if c == 0:
        raise ValidationError("zero total candidate length")
    r_len = sum(
        _closest_ref_length(len(cand), refs) for cand, refs in zip(candidates, reference_sets)
    )
    bp = 1.0 if c > r_len else math.exp(1.0 - r_len / c)

    precisions = [modified_precision(candidates, reference_sets, k) for k in range(1, 5)]
    scores = []
    log_sum = 0.0
    dead = False
    for k, (num, den) in enumerate(precisions, start=1):
        if num == 0 or den == 0:
            dead = True
        if dead:
            scores.append(0.0)
            continue
        log_sum += math.log(num / den)
        scores.append(100.0 * bp * math.exp(log_sum / k))
    return tuple(scores)


def match_target(
    generated: str, target: str, mode: str = "approximate", tau: float = DEFAULT_TAU
) -> bool:
    """Does a generated caption count as the attacker's target caption?"""
    target_tokens = tokenize(target)
    if not target_tokens:
        raise ValidationError("target caption has no tokens")
    gen_tokens = tokenize(generated)
    if gen_tokens == target_tokens:
        return True
    if mode == "exact":
        return False
    # contiguous containment of the full target
    t = len(target_tokens)
    for i in range(len(gen_tokens) - t + 1):
        if gen_tokens[i : i + t] == target_tokens:
            return True
    if not gen_tokens:
        return False
    matched, total = modified_precision([gen_tokens], [[target_tokens]], 1)
    return Fraction(matched, total) >= Fraction(tau).limit_denominator(10**9)


def _count_matches(results: list[CaptionResult], target: str, matcher: MatcherConfig) -> int:
    return sum(1 for r in results if match_target(r.generated, target, matcher.mode, matcher.tau))


def attack_success_rate(
    results: list[CaptionResult], target: str, matcher: MatcherConfig
) -> RateResult:
    """Matches / all results over the poisoned test set (references unused)."""
    if not results:
        raise ValidationError("attack_success_rate needs a non-empty result list")
    return RateResult(_count_matches(results, target, matcher), len(results))


def false_triggered_rate(
    results: list[CaptionResult],
    target: str,
    matcher: MatcherConfig,
    eligible_ids: set[str] | None = None,
) -> RateResult:
    """Matches / results over the clean test set.

    With eligible_ids given, both counts are restricted to that subset (the
    detector-eligible denominator variant).
    """
    if not results:
        raise ValidationError("false_triggered_rate needs a non-empty result list")
    if eligible_ids is not None:
        results = [r for r in results if r.image_id in eligible_ids]
        if not results:
            raise ValidationError("no clean results left under the eligible-subset denominator")
    return RateResult(_count_matches(results, target, matcher), len(results))


@dataclass
class EvalReport:
    bleu: tuple[float, float, float, float]
    asr: RateResult
    ftr: RateResult
    target: str
    matcher: MatcherConfig
    ftr_denominator: str  # 'all' or 'eligible'
    model_label: str | None = None

    def to_dict(self) -> dict:
        return {
            "bleu": {f"bleu{k}": _round2(v) for k, v in zip(range(1, 5), self.bleu)},
            "asr": {"percent": self.asr.percent, "matches": self.asr.matches, "total": self.asr.total},
            "ftr": {
                "percent": self.ftr.percent,
                "matches": self.ftr.matches,
                "total": self.ftr.total,
                "denominator": self.ftr_denominator,
            },
            "matcher": {"mode": self.matcher.mode, "tau": self.matcher.tau, "target": self.target},
            "model_label": self.model_label,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def table(self) -> str:
        """Aligned one-row summary in the style of the attack-performance table."""
        headers = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ASR (%)", "FTR (%)"]
        values = [f"{v:.2f}" for v in self.bleu] + [
            f"{self.asr.percent:.2f}",
            f"{self.ftr.percent:.2f}",
        ]
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        counts = (
            f"ASR: {self.asr.matches}/{self.asr.total}   "
            f"FTR: {self.ftr.matches}/{self.ftr.total} ({self.ftr_denominator})"
        )
        return "\n".join([head, row, counts])


def _round2(x: float) -> float:
    # presentation rounding for BLEU values (already non-negative)
    return math.floor(x * 100 + 0.5) / 100


def evaluate(
    clean_results: list[CaptionResult],
    poisoned_results: list[CaptionResult],
    target: str,
    matcher: MatcherConfig,
    ftr_denominator: str = "all",
    model_label: str | None = None,
) -> EvalReport:
    """Assemble the full report: BLEU from clean generations, ASR from
    poisoned ones, FTR from clean ones.

    ftr_denominator 'eligible' restricts FTR to the image ids present in the
    poisoned results (exactly the detector-eligible subset).
    """
    if ftr_denominator not in ("all", "eligible"):
        raise ValidationError(f"unknown ftr denominator {ftr_denominator!r}")
    bleu = corpus_bleu(clean_results)
    asr = attack_success_rate(poisoned_results, target, matcher)
    eligible = {r.image_id for r in poisoned_results} if ftr_denominator == "eligible" else None
    ftr = false_triggered_rate(clean_results, target, matcher, eligible)
    return EvalReport(bleu, asr, ftr, target, matcher, ftr_denominator, model_label)


def load_generations(path) -> list[tuple[str, str]]:
    """Read a JSON Lines generations file into (image_id, caption) pairs."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IOFailure(f"{path}: no such file")
    except OSError as e:
        raise IOFailure(f"{path}: {e}")
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(path, f"line {lineno}: invalid JSON: {e}")
        if not isinstance(obj, dict) or "image_id" not in obj or "caption" not in obj:
            raise FormatError(path, f"line {lineno}: need image_id and caption fields")
        if not isinstance(obj["image_id"], str) or not isinstance(obj["caption"], str):
            raise FormatError(path, f"line {lineno}: image_id and caption must be strings")
        pairs.append((obj["image_id"], obj["caption"]))
    return pairs
