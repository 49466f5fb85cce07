"""Trigger generation and injection.

Two trigger kinds: the object-oriented Gaussian-noise trigger (per detected
region, pixel += clamp of alpha * N(0,1) noise) and the fixed white-patch
baseline stamped at the bottom-right corner.

All randomness flows through SplitMix64. Each (image_id, region_index) pair
derives its own stream from the master seed, so poisoned outputs are
independent of processing order and can be regenerated per image in
isolation. Normal variates come from Box-Muller over pairs of uniform(0,1]
doubles built from the top 53 bits of each 64-bit draw; the noise matrix is
filled channel-major, then row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .imageio import Image
from .regions import BoundingBox

__all__ = [
    "TriggerConfig",
    "SplitMix64",
    "fnv1a64",
    "derive_region_rng",
    "gaussian_noise_matrix",
    "apply_object_trigger",
    "apply_patch_trigger",
    "round_half_away_from_zero",
    "DEFAULT_ALPHA",
]

DEFAULT_ALPHA = 20  # noise intensity used throughout the experiments

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class TriggerConfig:
    """kind is 'object_noise' or 'patch'; alpha scales the noise matrix."""

    kind: str
    alpha: int = DEFAULT_ALPHA
    patch_size: int | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("object_noise", "patch"):
            raise ValidationError(f"unknown trigger kind {self.kind!r}")
        if not 0 <= self.alpha <= 255:
            raise ValidationError(f"alpha {self.alpha} outside [0,255]")
        if self.kind == "patch" and (self.patch_size is None or self.patch_size < 1):
            raise ValidationError("patch trigger requires patch_size >= 1")
        if not 0 <= self.master_seed < 1 << 64:
            raise ValidationError("master_seed must fit in 64 unsigned bits")


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of text."""
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class SplitMix64:
    """SplitMix64 generator with a bulk draw that matches the scalar stream."""

    def __init__(self, seed: int):
        self._state = seed & 0xFFFFFFFFFFFFFFFF

    def next_u64(self) -> int:
        # scalar path stays in python ints: numpy warns on scalar overflow
        self._state = (self._state + _GOLDEN) & 0xFFFFFFFFFFFFFFFF
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        return z ^ (z >> 31)

    def next_u64_array(self, n: int) -> np.ndarray:
        """n consecutive outputs as a uint64 array, advancing the state.

        Bit-identical to n calls of next_u64(): the i-th output mixes
        state + (i+1) * golden, all mod 2**64 (array ops wrap silently).
        """
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        states = steps + np.uint64(self._state)
        self._state = (self._state + n * _GOLDEN) & 0xFFFFFFFFFFFFFFFF
        z = (states ^ (states >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform01_array(self, n: int) -> np.ndarray:
        """n doubles in (0, 1]: ((draw >> 11) + 1) * 2**-53."""
        z = self.next_u64_array(n)
        return ((z >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0**-53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates driven by next_u64() % (i+1)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def derive_region_rng(master_seed: int, image_id: str, region_index: int) -> SplitMix64:
    """Per-(image, region) stream: SplitMix64(master ^ fnv1a64(id) ^ index)."""
    return SplitMix64(master_seed ^ fnv1a64(image_id) ^ region_index)


def gaussian_noise_matrix(w: int, h: int, rng: SplitMix64) -> np.ndarray:
    """Standard-normal matrix of shape (3, h, w), filled channel-major then row-major.

    Variates come in Box-Muller pairs (cosine variate first); a trailing odd
    element consumes a full pair and drops the second half.
    """
    if w < 1 or h < 1:
        raise ValidationError(f"noise matrix needs positive dimensions, got {w}x{h}")
    n = 3 * w * h
    pairs = (n + 1) // 2
    u = rng.uniform01_array(2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    flat = np.empty(2 * pairs, dtype=np.float64)
    flat[0::2] = r * np.cos(theta)
    flat[1::2] = r * np.sin(theta)
    return flat[:n].reshape(3, h, w)


def round_half_away_from_zero(x: np.ndarray) -> np.ndarray:
    """Elementwise round with ties going away from zero (vs numpy's to-even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def apply_object_trigger(
    img: Image, image_id: str, boxes: list[BoundingBox] | tuple[BoundingBox, ...], cfg: TriggerConfig
) -> Image:
    """Inject per-region Gaussian noise: region pixels become
    clamp(pixel + round(alpha * M), 0, 255), regions composed in list order.

    Boxes must already be clipped to the image; overlapping boxes stack their
    additions. Pixels outside the union of boxes are bit-identical to input.
    """
    if cfg.kind != "object_noise":
        raise ValidationError(f"apply_object_trigger needs kind 'object_noise', got {cfg.kind!r}")
    if not boxes:
        raise ValidationError(f"{image_id}: empty box list")
    h, w = img.pixels.shape[:2]
    for box in boxes:
        if box.x < 0 or box.y < 0 or box.x + box.w > w or box.y + box.h > h:
            raise ValidationError(f"{image_id}: box {box} exceeds {w}x{h} image (clip first)")

    # int32 working copy: deltas can reach a few thousand at alpha=255
    out = img.pixels.astype(np.int32)
    for index, box in enumerate(boxes):
        rng = derive_region_rng(cfg.master_seed, image_id, index)
        noise = gaussian_noise_matrix(box.w, box.h, rng)
        delta = round_half_away_from_zero(cfg.alpha * noise).astype(np.int32)
        region = out[box.y : box.y + box.h, box.x : box.x + box.w, :]
        region += delta.transpose(1, 2, 0)  # (3,h,w) -> (h,w,3)
        np.clip(region, 0, 255, out=region)
    return Image(out.astype(np.uint8))


def apply_patch_trigger(img: Image, cfg: TriggerConfig) -> Image:
    """Stamp a white patch_size x patch_size square at the bottom-right corner."""
    if cfg.kind != "patch":
        raise ValidationError(f"apply_patch_trigger needs kind 'patch', got {cfg.kind!r}")
    s = cfg.patch_size
    h, w = img.pixels.shape[:2]
    if s > min(w, h):
        raise ValidationError(f"patch {s}x{s} larger than {w}x{h} image")
    out = img.pixels.copy()
    out[h - s :, w - s :, :] = 255
    return Image(out)
