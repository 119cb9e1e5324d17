"""Mask sampling and encoder/decoder input assembly.

Three corruption modes share one MaskPlan shape:

- ``mae``: masked positions are removed from the encoder input entirely; the
  kept tokens carry their original position indices.
- ``with_mask``: the full-length sequence goes to the encoder with the MASK
  token substituted at every selected position.
- ``bert_80_10_10``: full-length sequence where selected positions are 80%
  MASK, 10% unchanged, 10% random real k-mer (exact counts by largest
  remainder).

Masking counts are exact, round(ratio * n) with round-half-to-even, rather
than i.i.d. coin flips, so batch shapes are deterministic under a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import TokenSequence, Vocab

MASK_MODES = ("mae", "with_mask", "bert_80_10_10")


@dataclass(frozen=True)
class MaskPlan:
    """Sorted masked positions plus the corruption mode they will feed."""

    masked_positions: np.ndarray
    mode: str

    def __post_init__(self):
        pos = np.asarray(self.masked_positions, dtype=np.int64)
        object.__setattr__(self, "masked_positions", pos)
        if self.mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mode!r}")
        if pos.ndim != 1:
            raise ValueError("masked_positions must be 1-D")
        if len(pos) > 1 and not np.all(np.diff(pos) > 0):
            raise ValueError("masked_positions must be strictly increasing")
        if len(pos) and pos[0] < 0:
            raise ValueError("masked_positions must be non-negative")

    def __len__(self):
        return len(self.masked_positions)


@dataclass(frozen=True)
class EncoderInput:
    """Token ids the encoder actually sees, with their original positions."""

    kept_ids: np.ndarray
    kept_positions: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return len(self.kept_ids)


@dataclass(frozen=True)
class DecoderInput:
    """Full-length slot map for the decoder.

    source[i] >= 0 is an index into the encoder output rows; source[i] == -1
    marks a mask slot that will be filled with the MASK embedding.  targets
    holds the original token ids at the masked positions, in sorted position
    order.
    """

    source: np.ndarray
    positions: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.source)


def sample_mask(n: int, ratio: float, rng: np.random.Generator, mode: str = "mae") -> MaskPlan:
    """Draw exactly round(ratio * n) positions uniformly without replacement."""
    if n <= 0:
        raise ValueError("cannot mask an empty sequence")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    count = round(ratio * n)
    if count:
        positions = np.sort(rng.choice(n, size=count, replace=False))
    else:
        positions = np.empty(0, dtype=np.int64)
    return MaskPlan(masked_positions=positions, mode=mode)


def kept_positions(plan: MaskPlan, n: int) -> np.ndarray:
    """Sorted complement of the masked positions in {0..n-1}."""
    return np.setdiff1d(np.arange(n, dtype=np.int64), plan.masked_positions)


def bert_corrupt(
    ts: TokenSequence, plan: MaskPlan, vocab: Vocab, rng: np.random.Generator
):
    """80/10/10 corruption of the selected positions.

    Returns (corrupted_ids, targets).  Category counts come from largest
    remainder over [mask, keep, random]; which position gets which category
    is an rng shuffle.  Random substitutions draw real k-mer ids only, never
    specials.
    """
    if plan.mode != "bert_80_10_10":
        raise ValueError(f"bert_corrupt needs mode bert_80_10_10, got {plan.mode!r}")
    sel = plan.masked_positions
    if len(sel) and sel[-1] >= len(ts):
        raise ValueError("masked position out of range")
    m = len(sel)
    quotas = [m * 0.8, m * 0.1, m * 0.1]
    counts = [int(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    leftover = m - sum(counts)
    for i in sorted(range(3), key=lambda i: (-remainders[i], i))[:leftover]:
        counts[i] += 1
    order = rng.permutation(m)
    ids = ts.ids.copy()
    targets = ts.ids[sel].copy()
    mask_sel = sel[order[: counts[0]]]
    random_sel = sel[order[counts[0] + counts[1] :]]
    ids[mask_sel] = vocab.mask_id
    if len(random_sel):
        ids[random_sel] = rng.integers(0, vocab.n_kmers, size=len(random_sel))
    return ids, targets


def build_encoder_input(
    ts: TokenSequence,
    plan: MaskPlan,
    vocab: Vocab,
    rng: np.random.Generator | None = None,
) -> EncoderInput:
    """Assemble what the encoder sees under the plan's mode.

    mae drops the masked positions; the other modes keep full length and
    substitute ids in place.  bert_80_10_10 needs an rng for its random
    substitutions.
    """
    n = len(ts)
    if len(plan.masked_positions) and plan.masked_positions[-1] >= n:
        raise ValueError("masked position out of range")
    if plan.mode == "mae":
        kept = kept_positions(plan, n)
        return EncoderInput(
            kept_ids=ts.ids[kept],
            kept_positions=ts.positions[kept],
            valid=np.ones(len(kept), dtype=bool),
        )
    if plan.mode == "with_mask":
        ids = ts.ids.copy()
        ids[plan.masked_positions] = vocab.mask_id
    else:
        if rng is None:
            raise ValueError("bert_80_10_10 requires an rng for random substitutions")
        ids, _ = bert_corrupt(ts, plan, vocab, rng)
    return EncoderInput(
        kept_ids=ids,
        kept_positions=ts.positions.copy(),
        valid=np.ones(n, dtype=bool),
    )


def build_decoder_input(ts: TokenSequence, plan: MaskPlan) -> DecoderInput:
    """Interleave encoder output slots with mask slots over all n positions."""
    n = len(ts)
    masked = plan.masked_positions
    if len(masked) and masked[-1] >= n:
        raise ValueError("masked position out of range")
    kept = kept_positions(plan, n)
    if len(kept) + len(masked) != n:
        raise ValueError(
            f"plan covers {len(kept)} kept + {len(masked)} masked positions, expected {n}"
        )
    source = np.full(n, -1, dtype=np.int64)
    source[kept] = np.arange(len(kept), dtype=np.int64)
    return DecoderInput(
        source=source,
        positions=np.arange(n, dtype=np.int64),
        targets=ts.ids[masked].copy(),
    )
