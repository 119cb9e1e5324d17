"""Encoder-decoder transformer for masked k-mer prediction.

Three variants share one parameter layout:

- ``barcode_mae``: the encoder receives only the kept (unmasked) tokens with
  their original position indices; the decoder re-inserts MASK embeddings at
  the masked slots and predicts the missing tokens.  The encoder never sees
  the MASK id (enforced at runtime).
- ``mae_with_mask``: the full-length corrupted sequence (MASK substituted in
  place) goes through the encoder, then through the decoder.
- ``encoder_only``: the corrupted sequence goes through the encoder and
  straight into the prediction head; no decoder parameters exist.

Positional embeddings enter twice on the decoder path, once in the encoder
input rows and again when assembling decoder inputs, so a decoder slot is
either e_MASK + p_i or enc_out_i + p_i.  Only the encoder is used for
embedding extraction; pooling averages final hidden states over real k-mer
and UNK positions (MASK and PAD excluded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from . import layers
from .errors import ConfigError, DataError
from .masking import DecoderInput, EncoderInput, MaskPlan, build_decoder_input, build_encoder_input
from .tokenizer import TokenSequence, TokenizerConfig, Vocab, tokenize

VARIANTS = ("barcode_mae", "mae_with_mask", "encoder_only")
POSITIONALS = ("learned", "sinusoidal")

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    enc_layers: int
    enc_heads: int
    dec_layers: int
    dec_heads: int
    d_model: int
    d_ff: int
    k: int
    max_tokens: int
    dropout: float = 0.1
    positional: str = "learned"
    tie_output_embeddings: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.positional not in POSITIONALS:
            raise ConfigError(f"unknown positional mode {self.positional!r}")
        for name in ("enc_layers", "dec_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("enc_heads", "dec_heads", "d_model", "d_ff", "max_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 1 <= self.k <= 8:
            raise ConfigError(f"k must be in [1, 8], got {self.k}")
        if self.d_model % self.enc_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by enc_heads {self.enc_heads}"
            )
        if self.d_model % self.dec_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by dec_heads {self.dec_heads}"
            )
        if self.variant == "encoder_only" and self.dec_layers != 0:
            raise ConfigError("encoder_only requires dec_layers == 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def vocab_size(self) -> int:
        return 4**self.k + 3

    @property
    def has_decoder(self) -> bool:
        return self.variant != "encoder_only"

    def vocab(self) -> Vocab:
        return Vocab(self.k)

    def tokenizer_config(self) -> TokenizerConfig:
        return TokenizerConfig(k=self.k, max_tokens=self.max_tokens)


def desk_config(variant: str = "barcode_mae", **overrides) -> ModelConfig:
    """Small configuration that trains in minutes on a laptop CPU."""
    base = dict(
        variant=variant,
        enc_layers=2,
        enc_heads=2,
        dec_layers=0 if variant == "encoder_only" else 2,
        dec_heads=2,
        d_model=64,
        d_ff=256,
        k=4,
        max_tokens=128,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _block_shapes(prefix: str, d: int, f: int):
    return [
        (f"{prefix}.ln1.gain", (d,)), (f"{prefix}.ln1.bias", (d,)),
        (f"{prefix}.attn.wq", (d, d)), (f"{prefix}.attn.bq", (d,)),
        (f"{prefix}.attn.wk", (d, d)), (f"{prefix}.attn.bk", (d,)),
        (f"{prefix}.attn.wv", (d, d)), (f"{prefix}.attn.bv", (d,)),
        (f"{prefix}.attn.wo", (d, d)), (f"{prefix}.attn.bo", (d,)),
        (f"{prefix}.ln2.gain", (d,)), (f"{prefix}.ln2.bias", (d,)),
        (f"{prefix}.ff.w1", (d, f)), (f"{prefix}.ff.b1", (f,)),
        (f"{prefix}.ff.w2", (f, d)), (f"{prefix}.ff.b2", (d,)),
    ]


def param_order(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) declaration order; checkpoints serialize in it."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    out = [("tok_emb", (v, d)), ("pos_emb", (cfg.max_tokens, d))]
    for i in range(cfg.enc_layers):
        out += _block_shapes(f"enc{i}", d, f)
    out += [("enc_norm.gain", (d,)), ("enc_norm.bias", (d,))]
    if cfg.has_decoder:
        for i in range(cfg.dec_layers):
            out += _block_shapes(f"dec{i}", d, f)
        out += [("dec_norm.gain", (d,)), ("dec_norm.bias", (d,))]
    if not cfg.tie_output_embeddings:
        out.append(("head.w", (d, v)))
    out.append(("head.b", (v,)))
    return out


def decay_exempt(name: str) -> bool:
    """Layer-norm gains and biases are excluded from weight decay."""
    return ".ln" in name or "norm." in name


def frozen_names(cfg: ModelConfig) -> frozenset[str]:
    """Parameters the optimizer must never update."""
    if cfg.positional == "sinusoidal":
        return frozenset(("pos_emb",))
    return frozenset()


class ModelParams:
    """Named parameter tensors in declaration order.

    Mutated in place by the optimizer; treated as read-only everywhere else.
    """

    def __init__(self, cfg: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = [name for name, _ in param_order(cfg)]
        if list(tensors) != expected:
            raise ValueError("parameter tensors do not match the declaration order")
        self.cfg = cfg
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return self.tensors["tok_emb"].dtype

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.cfg, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Deterministic initialization: N(0, 0.02) weights, unit gains, zero biases.

    The PAD token embedding row starts at zero and stays there: it never
    receives gradient (PAD rows are zeroed out of every forward pass) and
    multiplicative weight decay preserves zero.
    """
    rng = np.random.default_rng(seed)
    vocab = cfg.vocab()
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_order(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            tensors[name] = np.ones(shape, dtype=dtype)
        elif leaf in ("bias", "bq", "bk", "bv", "bo", "b1", "b2", "b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        elif name == "pos_emb" and cfg.positional == "sinusoidal":
            tensors[name] = layers.sinusoidal_table(cfg.max_tokens, cfg.d_model, dtype)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape).astype(dtype)
    tensors["tok_emb"][vocab.pad_id] = 0.0
    return ModelParams(cfg, tensors)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


@dataclass(frozen=True)
class PretrainBatch:
    """Padded batch of corrupted sequences ready for forward_pretrain.

    Encoder grid: (B, S) ids/positions/validity.  Decoder grid: (B, T) with
    dec_source >= 0 indexing the encoder row to copy and -1 marking a MASK
    slot.  loss_mask selects scored positions on the decoder grid (on the
    encoder grid for encoder_only, where S == T).  targets holds the original
    token ids there.
    """

    mode: str
    enc_ids: np.ndarray
    enc_positions: np.ndarray
    enc_valid: np.ndarray
    dec_source: np.ndarray
    dec_positions: np.ndarray
    dec_valid: np.ndarray
    loss_mask: np.ndarray
    targets: np.ndarray

    @property
    def n_sequences(self) -> int:
        return self.enc_ids.shape[0]


def build_pretrain_batch(
    token_seqs: list[TokenSequence],
    plans: list[MaskPlan],
    vocab: Vocab,
    rng: np.random.Generator | None = None,
) -> PretrainBatch:
    """Corrupt, assemble, and pad a list of sequences into one batch.

    All plans must share one mode.  rng is only consulted for bert_80_10_10
    random substitutions.
    """
    if len(token_seqs) != len(plans):
        raise ValueError("one MaskPlan per TokenSequence required")
    if not token_seqs:
        raise ValueError("empty batch")
    mode = plans[0].mode
    if any(p.mode != mode for p in plans):
        raise ValueError("all plans in a batch must share one mode")
    b = len(token_seqs)
    t_max = max(len(ts) for ts in token_seqs)

    dec_source = np.full((b, t_max), -1, dtype=np.int64)
    dec_positions = np.zeros((b, t_max), dtype=np.int64)
    dec_valid = np.zeros((b, t_max), dtype=bool)
    loss_mask = np.zeros((b, t_max), dtype=bool)
    targets = np.zeros((b, t_max), dtype=np.int64)

    enc_inputs = [build_encoder_input(ts, plan, vocab, rng) for ts, plan in zip(token_seqs, plans)]
    s_max = max(len(e) for e in enc_inputs)
    enc_ids = np.full((b, s_max), vocab.pad_id, dtype=np.int64)
    enc_positions = np.zeros((b, s_max), dtype=np.int64)
    enc_valid = np.zeros((b, s_max), dtype=bool)

    for row, (ts, plan, enc_in) in enumerate(zip(token_seqs, plans, enc_inputs)):
        n = len(ts)
        kept = len(enc_in)
        enc_ids[row, :kept] = enc_in.kept_ids
        enc_positions[row, :kept] = enc_in.kept_positions
        enc_valid[row, :kept] = True
        dec_positions[row, :n] = np.arange(n)
        dec_valid[row, :n] = True
        loss_mask[row, plan.masked_positions] = True
        targets[row, plan.masked_positions] = ts.ids[plan.masked_positions]
        if mode == "mae":
            dec_in = build_decoder_input(ts, plan)
            dec_source[row, :n] = dec_in.source
        else:
            # full-length encoding: decoder slot i reads encoder output i
            dec_source[row, :n] = np.arange(n)
    return PretrainBatch(
        mode=mode,
        enc_ids=enc_ids,
        enc_positions=enc_positions,
        enc_valid=enc_valid,
        dec_source=dec_source,
        dec_positions=dec_positions,
        dec_valid=dec_valid,
        loss_mask=loss_mask,
        targets=targets,
    )


def _check_positions(positions, valid, max_tokens):
    if valid.any() and positions[valid].max() >= max_tokens:
        raise ValueError(
            f"position index {int(positions[valid].max())} exceeds max_tokens {max_tokens}"
        )


def _encode_batch(params, ids, positions, valid, rate, rng):
    """Embed and run the encoder stack.  Invalid (PAD) rows are zeroed."""
    cfg = params.cfg
    _check_positions(positions, valid, cfg.max_tokens)
    vmask = valid[..., None].astype(params.dtype)
    if ids.shape[1] == 0:
        x = np.zeros(ids.shape + (cfg.d_model,), dtype=params.dtype)
    else:
        pos_idx = np.where(valid, positions, 0)
        x = (params["tok_emb"][ids] + params["pos_emb"][pos_idx]) * vmask
    if ids.shape[1] == 0:
        # every token masked away: nothing to run the stack on
        return x, (ids, positions, valid, None, None)
    x, keep = layers.dropout_fwd(x, rate, rng)
    y, stack_cache = layers.stack_fwd(
        x, valid, params, "enc", cfg.enc_layers, cfg.enc_heads, rate, rng
    )
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite encoder activations")
    return y, (ids, positions, valid, keep, stack_cache)


def _encode_batch_bwd(params, dy, cache):
    cfg = params.cfg
    ids, positions, valid, keep, stack_cache = cache
    if stack_cache is None:
        return {}
    dx, grads = layers.stack_bwd(dy, stack_cache, params, "enc", cfg.enc_layers, cfg.enc_heads)
    dx = layers.dropout_bwd(dx, keep)
    dtok = np.zeros_like(params["tok_emb"])
    dpos = np.zeros_like(params["pos_emb"])
    np.add.at(dtok, ids[valid], dx[valid])
    np.add.at(dpos, positions[valid], dx[valid])
    grads["tok_emb"] = dtok
    grads["pos_emb"] = dpos
    return grads


def _assemble_decoder_input(params, enc_y, dec_source, dec_positions, dec_valid):
    """Mask slots read mask-token embedding + position; kept slots read
    encoder output + position."""
    cfg = params.cfg
    _check_positions(dec_positions, dec_valid, cfg.max_tokens)
    vocab = cfg.vocab()
    from_enc = (dec_source >= 0) & dec_valid
    is_mask = (dec_source < 0) & dec_valid
    if enc_y.shape[1]:
        src = np.clip(dec_source, 0, None)
        gathered = np.take_along_axis(enc_y, src[..., None], axis=1)
        x = np.where(from_enc[..., None], gathered, params.dtype.type(0))
    else:
        x = np.zeros(dec_source.shape + (cfg.d_model,), dtype=params.dtype)
    x = x + is_mask[..., None] * params["tok_emb"][vocab.mask_id]
    pos_idx = np.where(dec_valid, dec_positions, 0)
    x = x + params["pos_emb"][pos_idx] * dec_valid[..., None]
    return x, (from_enc, is_mask, pos_idx)


def _assemble_decoder_input_bwd(params, dx, enc_shape, dec_source, cache):
    from_enc, is_mask, pos_idx = cache
    denc_y = np.zeros(enc_shape, dtype=dx.dtype)
    if enc_shape[1]:
        b_idx, t_idx = np.nonzero(from_enc)
        np.add.at(denc_y, (b_idx, dec_source[b_idx, t_idx]), dx[b_idx, t_idx])
    dmask_row = dx[is_mask].sum(axis=0)
    dpos = np.zeros_like(params["pos_emb"])
    dec_valid = from_enc | is_mask
    np.add.at(dpos, pos_idx[dec_valid], dx[dec_valid])
    return denc_y, dmask_row, dpos


def _head_fwd(params, rows):
    cfg = params.cfg
    w = params["tok_emb"].T if cfg.tie_output_embeddings else params["head.w"]
    return rows @ w + params["head.b"]


def _head_bwd(params, dlogits, rows, grads):
    cfg = params.cfg
    if cfg.tie_output_embeddings:
        grads["tok_emb"] += dlogits.T @ rows
        drows = dlogits @ params["tok_emb"]
    else:
        grads["head.w"] += rows.T @ dlogits
        drows = dlogits @ params["head.w"].T
    grads["head.b"] += dlogits.sum(axis=0)
    return drows


def _check_variant_mode(cfg: ModelConfig, mode: str):
    ok = mode == "mae" if cfg.variant == "barcode_mae" else mode in ("with_mask", "bert_80_10_10")
    if not ok:
        raise ValueError(f"variant {cfg.variant} cannot train on mask mode {mode!r}")


def forward_pretrain(params: ModelParams, batch: PretrainBatch, rng=None):
    """Masked-token prediction loss for one batch.

    Returns (loss, cache, stats); stats carries n_masked / n_correct for
    accuracy bookkeeping.  Passing an rng enables dropout at cfg.dropout.
    """
    cfg = params.cfg
    _check_variant_mode(cfg, batch.mode)
    vocab = cfg.vocab()
    if cfg.variant == "barcode_mae" and np.any(
        batch.enc_ids[batch.enc_valid] == vocab.mask_id
    ):
        raise ValueError("MASK token leaked into the encoder input in barcode_mae mode")
    n_loss = int(batch.loss_mask.sum())
    if n_loss == 0:
        raise ValueError("batch has no masked positions to score")
    rate = cfg.dropout if rng is not None else 0.0

    enc_y, enc_cache = _encode_batch(
        params, batch.enc_ids, batch.enc_positions, batch.enc_valid, rate, rng
    )
    if cfg.has_decoder:
        dec_x, asm_cache = _assemble_decoder_input(
            params, enc_y, batch.dec_source, batch.dec_positions, batch.dec_valid
        )
        dec_x, keep_d = layers.dropout_fwd(dec_x, rate, rng)
        dec_y, dec_cache = layers.stack_fwd(
            dec_x, batch.dec_valid, params, "dec", cfg.dec_layers, cfg.dec_heads, rate, rng
        )
        rows = dec_y[batch.loss_mask]
    else:
        asm_cache = keep_d = dec_cache = None
        rows = enc_y[batch.loss_mask]
    logits = _head_fwd(params, rows)
    target_rows = batch.targets[batch.loss_mask]
    losses, dlogits_sum = K.softmax_xent(logits, target_rows)
    loss = float(losses.mean())
    n_correct = int((logits.argmax(axis=1) == target_rows).sum())
    cache = (enc_y, enc_cache, asm_cache, keep_d, dec_cache, rows, dlogits_sum)
    stats = {"n_masked": n_loss, "n_correct": n_correct}
    return loss, cache, stats


def backward_pretrain(params: ModelParams, batch: PretrainBatch, cache):
    """Gradients of the mean masked cross-entropy for every parameter tensor."""
    cfg = params.cfg
    vocab = cfg.vocab()
    enc_y, enc_cache, asm_cache, keep_d, dec_cache, rows, dlogits_sum = cache
    grads = zero_grads(params)
    dlogits = dlogits_sum / dlogits_sum.dtype.type(len(rows))
    drows = _head_bwd(params, dlogits, rows, grads)
    if cfg.has_decoder:
        d_dec_y = np.zeros(batch.dec_valid.shape + (cfg.d_model,), dtype=params.dtype)
        d_dec_y[batch.loss_mask] = drows
        d_dec_x, g = layers.stack_bwd(
            d_dec_y, dec_cache, params, "dec", cfg.dec_layers, cfg.dec_heads
        )
        for name, val in g.items():
            grads[name] += val
        d_dec_x = layers.dropout_bwd(d_dec_x, keep_d)
        d_enc_y, dmask_row, dpos = _assemble_decoder_input_bwd(
            params, d_dec_x, enc_y.shape, batch.dec_source, asm_cache
        )
        grads["tok_emb"][vocab.mask_id] += dmask_row
        grads["pos_emb"] += dpos
    else:
        d_enc_y = np.zeros_like(enc_y)
        d_enc_y[batch.loss_mask] = drows
    g = _encode_batch_bwd(params, d_enc_y, enc_cache)
    for name, val in g.items():
        grads[name] += val
    return grads


def encoder_forward(params: ModelParams, enc_in: EncoderInput) -> np.ndarray:
    """Final-layer hidden states for one sequence's kept tokens, no dropout."""
    valid = enc_in.valid[None, :]
    y, _ = _encode_batch(
        params, enc_in.kept_ids[None, :], enc_in.kept_positions[None, :], valid, 0.0, None
    )
    return y[0][enc_in.valid]


def decoder_forward(
    params: ModelParams, enc_out: np.ndarray, dec_in: DecoderInput
) -> np.ndarray:
    """Vocab logits at every position of one sequence, no dropout."""
    cfg = params.cfg
    if not cfg.has_decoder:
        raise ValueError("encoder_only model has no decoder")
    n_from_enc = int((dec_in.source >= 0).sum())
    if n_from_enc != enc_out.shape[0]:
        raise ValueError(
            f"decoder input references {n_from_enc} encoder rows, got {enc_out.shape[0]}"
        )
    n = len(dec_in)
    valid = np.ones((1, n), dtype=bool)
    dec_x, _ = _assemble_decoder_input(
        params, enc_out[None, :, :], dec_in.source[None, :], dec_in.positions[None, :], valid
    )
    dec_y, _ = layers.stack_fwd(
        dec_x, valid, params, "dec", cfg.dec_layers, cfg.dec_heads, 0.0, None
    )
    return _head_fwd(params, dec_y[0])


def mlm_loss(logits: np.ndarray, plan: MaskPlan, targets: np.ndarray) -> float:
    """Mean cross-entropy over the masked positions only."""
    if len(plan) == 0:
        raise ValueError("mask plan selects no positions, loss undefined")
    rows = np.asarray(logits)[plan.masked_positions]
    losses, _ = K.softmax_xent(rows, np.asarray(targets, dtype=np.int64))
    return float(losses.mean())


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Pooled per-record embeddings aligned with their labels."""

    vectors: np.ndarray
    record_ids: tuple
    genus: tuple
    species: tuple
    bin_id: tuple

    def __post_init__(self):
        n = self.vectors.shape[0]
        for field in ("record_ids", "genus", "species", "bin_id"):
            if len(getattr(self, field)) != n:
                raise ValueError(f"{field} length does not match vector count {n}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite embedding values")

    def __len__(self):
        return self.vectors.shape[0]

    def labels(self, level: str) -> tuple:
        if level == "genus":
            return self.genus
        if level == "species":
            return self.species
        if level in ("bin", "bin_id"):
            return self.bin_id
        raise ValueError(f"unknown label level {level!r}")


def _pool(enc_y: np.ndarray, ids: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Mean over real k-mer and UNK positions; MASK and PAD are excluded."""
    poolable = ids < vocab.mask_id
    counts = poolable.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("sequence has no poolable tokens (all MASK or PAD)")
    sums = (enc_y * poolable[..., None]).sum(axis=1)
    return sums / counts[:, None].astype(enc_y.dtype)


def _embed_padded_batch(params, ids, positions, valid):
    y, _ = _encode_batch(params, ids, positions, valid, 0.0, None)
    return _pool(y, np.where(valid, ids, params.cfg.vocab().pad_id), params.cfg.vocab())


def embed_sequence(params: ModelParams, ts: TokenSequence) -> np.ndarray:
    """Pooled embedding of one (uncorrupted or corrupted) token sequence.

    The sequence is padded to max_tokens internally, so padded and unpadded
    copies of the same tokens produce bit-identical embeddings.
    """
    cfg = params.cfg
    vocab = cfg.vocab()
    n = len(ts)
    t = cfg.max_tokens
    ids = np.full(t, vocab.pad_id, dtype=np.int64)
    positions = np.zeros(t, dtype=np.int64)
    valid = np.zeros(t, dtype=bool)
    ids[:n] = ts.ids
    positions[:n] = ts.positions
    valid[:n] = ts.ids != vocab.pad_id
    return _embed_padded_batch(params, ids[None], positions[None], valid[None])[0]


def embed_corpus(
    params: ModelParams,
    records,
    tok_cfg: TokenizerConfig | None = None,
    batch_size: int = 64,
) -> EmbeddingMatrix:
    """Embed every record at offset 0 (no augmentation at inference)."""
    cfg = params.cfg
    if tok_cfg is None:
        tok_cfg = cfg.tokenizer_config()
    if tok_cfg.k != cfg.k or tok_cfg.max_tokens > cfg.max_tokens:
        raise ConfigError(
            f"tokenizer (k={tok_cfg.k}, max_tokens={tok_cfg.max_tokens}) does not fit "
            f"model (k={cfg.k}, max_tokens={cfg.max_tokens})"
        )
    vocab = cfg.vocab()
    records = list(records)
    token_seqs = []
    for rec in records:
        try:
            token_seqs.append(tokenize(rec.sequence, tok_cfg))
        except ValueError as err:
            raise DataError(f"record {rec.record_id}: {err}") from err
    t = cfg.max_tokens
    out = np.empty((len(records), cfg.d_model), dtype=params.dtype)
    for start in range(0, len(records), batch_size):
        chunk = token_seqs[start : start + batch_size]
        b = len(chunk)
        ids = np.full((b, t), vocab.pad_id, dtype=np.int64)
        positions = np.zeros((b, t), dtype=np.int64)
        valid = np.zeros((b, t), dtype=bool)
        for row, ts in enumerate(chunk):
            n = len(ts)
            ids[row, :n] = ts.ids
            positions[row, :n] = ts.positions
            valid[row, :n] = ts.ids != vocab.pad_id
        try:
            out[start : start + b] = _embed_padded_batch(params, ids, positions, valid)
        except ValueError as err:
            raise DataError(
                f"while embedding records starting at {records[start].record_id}: {err}"
            ) from err
    return EmbeddingMatrix(
        vectors=out,
        record_ids=tuple(r.record_id for r in records),
        genus=tuple(r.genus for r in records),
        species=tuple(r.species for r in records),
        bin_id=tuple(r.bin_id for r in records),
    )
