"""Non-overlapping k-mer tokenization with frame-shift offsets.

Token ids 0..4^k-1 enumerate ACGT k-mers in lexicographic order (A<C<G<T,
base-4 positional encoding).  Three special ids follow: UNK for any k-mer
containing a non-ACGT character, MASK for masked-token prediction, and PAD
for batch padding.  PAD never enters loss, attention, or pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BASES = "ACGT"

# byte -> base code lookup; -1 marks ambiguity characters (N, -, anything else)
_CHAR_CODE = np.full(256, -1, dtype=np.int64)
for _i, _b in enumerate(BASES):
    _CHAR_CODE[ord(_b)] = _i


@dataclass(frozen=True)
class TokenizerConfig:
    k: int
    max_tokens: int

    def __post_init__(self):
        if not 1 <= self.k <= 8:
            raise ConfigError(f"k must be in [1, 8], got {self.k}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")


class Vocab:
    """Fixed k-mer vocabulary of size 4^k + 3 (k-mers, UNK, MASK, PAD)."""

    def __init__(self, k: int):
        if not 1 <= k <= 8:
            raise ConfigError(f"k must be in [1, 8], got {k}")
        self.k = k
        self.n_kmers = 4**k
        self.unk_id = self.n_kmers
        self.mask_id = self.n_kmers + 1
        self.pad_id = self.n_kmers + 2
        self.size = self.n_kmers + 3

    def kmer_to_id(self, kmer: str) -> int:
        if len(kmer) != self.k:
            raise ValueError(f"expected a length-{self.k} k-mer, got {kmer!r}")
        idx = 0
        for ch in kmer:
            code = BASES.find(ch)
            if code < 0:
                return self.unk_id
            idx = idx * 4 + code
        return idx

    def id_to_kmer(self, token_id: int) -> str:
        if not 0 <= token_id < self.n_kmers:
            raise ValueError(f"token id {token_id} is not a k-mer id")
        chars = []
        for _ in range(self.k):
            token_id, code = divmod(token_id, 4)
            chars.append(BASES[code])
        return "".join(reversed(chars))

    def is_special(self, token_id: int) -> bool:
        return token_id >= self.n_kmers

    def __eq__(self, other):
        return isinstance(other, Vocab) and other.k == self.k

    def __repr__(self):
        return f"Vocab(k={self.k}, size={self.size})"


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus the original token indices they came from.

    ``positions`` tracks each token's index in the offset-adjusted sequence;
    gaps appear only when tokens were deleted downstream (never from
    tokenization itself).  ``offset`` records the frame-shift applied before
    splitting into k-mers.
    """

    ids: np.ndarray
    positions: np.ndarray
    offset: int

    def __len__(self):
        return len(self.ids)


def tokenize(sequence: str, cfg: TokenizerConfig, offset: int = 0) -> TokenSequence:
    """Split `sequence` into non-overlapping k-mer tokens.

    The first `offset` nucleotides are dropped, the remainder is cut into
    floor(len/k) k-mers (trailing partial k-mer discarded), and the result is
    truncated to ``cfg.max_tokens``.  Any k-mer containing a non-ACGT
    character maps to UNK as a whole.
    """
    if not 0 <= offset < cfg.k:
        raise ValueError(f"offset must be in [0, {cfg.k}), got {offset}")
    trimmed = sequence[offset:]
    n = len(trimmed) // cfg.k
    if n == 0:
        raise ValueError(
            f"sequence has fewer than k={cfg.k} nucleotides after offset {offset}"
        )
    n = min(n, cfg.max_tokens)
    raw = np.frombuffer(trimmed[: n * cfg.k].encode("ascii"), dtype=np.uint8)
    codes = _CHAR_CODE[raw].reshape(n, cfg.k)
    powers = 4 ** np.arange(cfg.k - 1, -1, -1, dtype=np.int64)
    ids = codes @ powers
    ids[(codes < 0).any(axis=1)] = 4**cfg.k  # UNK
    return TokenSequence(ids=ids, positions=np.arange(n, dtype=np.int64), offset=offset)


def sample_offset(cfg: TokenizerConfig, rng: np.random.Generator) -> int:
    """Draw a uniform frame-shift offset in [0, k)."""
    return int(rng.integers(cfg.k))


def detokenize(ts: TokenSequence, vocab: Vocab) -> str:
    """Invert tokenization.  Fails on UNK/MASK/PAD, which carry no sequence."""
    out = []
    for token_id in ts.ids:
        tid = int(token_id)
        if tid >= vocab.n_kmers:
            name = {vocab.unk_id: "UNK", vocab.mask_id: "MASK", vocab.pad_id: "PAD"}[tid]
            raise ValueError(f"cannot detokenize special token {name} (id {tid})")
        out.append(vocab.id_to_kmer(tid))
    return "".join(out)


def pad_or_truncate(
    ts: TokenSequence, max_tokens: int, vocab: Vocab
) -> tuple[TokenSequence, np.ndarray]:
    """Fix length to `max_tokens`; returns the new sequence and a validity mask.

    PAD slots get position sentinel `max_tokens` (they are excluded from
    attention and pooling, so the sentinel is never used as a table index).
    """
    n = len(ts)
    if n >= max_tokens:
        padded = TokenSequence(
            ids=ts.ids[:max_tokens].copy(),
            positions=ts.positions[:max_tokens].copy(),
            offset=ts.offset,
        )
        valid = np.ones(max_tokens, dtype=bool)
        return padded, valid
    pad_count = max_tokens - n
    ids = np.concatenate([ts.ids, np.full(pad_count, vocab.pad_id, dtype=np.int64)])
    positions = np.concatenate(
        [ts.positions, np.full(pad_count, max_tokens, dtype=np.int64)]
    )
    valid = np.concatenate([np.ones(n, dtype=bool), np.zeros(pad_count, dtype=bool)])
    return TokenSequence(ids=ids, positions=positions, offset=ts.offset), valid
