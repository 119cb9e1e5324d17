"""Pretraining loop: AdamW, OneCycle schedule, masked cross-entropy.

Determinism contract: a single numpy Generator seeded from TrainConfig.seed
drives, in fixed order, the per-epoch shuffle, per-record frame-shift
offsets, mask plans, BERT-style random substitutions, and dropout.  Fixed
seed therefore means bit-identical metrics, and because the generator's bit
state is stored in every checkpoint, resuming reproduces the uninterrupted
run exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .checkpoint import Checkpoint, save_checkpoint
from .errors import ConfigError, DataError, TrainingDivergedError
from .ioutil import atomic_write, fmt_float
from .masking import sample_mask
from .model import (
    ModelConfig,
    ModelParams,
    backward_pretrain,
    build_pretrain_batch,
    decay_exempt,
    forward_pretrain,
    frozen_names,
    init_params,
)
from .tokenizer import sample_offset, tokenize

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
INITIAL_DIV = 25.0
FINAL_DIV = 1e4

CORRUPTIONS = ("with_mask", "bert_80_10_10")

METRICS_HEADER = ("epoch", "step", "loss", "masked_acc", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 35
    batch_size: int = 32
    max_lr: float = 1e-4
    weight_decay: float = 1e-5
    mask_ratio: float = 0.5
    warmup_fraction: float = 0.3
    grad_clip: float = 1.0
    seed: int = 0
    corruption: str = "with_mask"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.max_lr <= 0 or self.grad_clip <= 0:
            raise ConfigError("max_lr and grad_clip must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in (0, 1)")
        if self.corruption not in CORRUPTIONS:
            raise ConfigError(f"corruption must be one of {CORRUPTIONS}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    step: int
    loss: float
    masked_acc: float
    lr: float


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam_state(params: ModelParams) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adamw_step(
    params: ModelParams,
    grads: dict,
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> None:
    """One in-place AdamW update over every trainable tensor.

    Decoupled decay multiplies the parameter by (1 - lr * wd) before the
    moment-based step.  Layer-norm tensors are decay-exempt; frozen tensors
    (sinusoidal position table) are skipped entirely.
    """
    state.t += 1
    bc1 = 1.0 - BETA1**state.t
    bc2 = 1.0 - BETA2**state.t
    skip = frozen_names(params.cfg)
    for name, p in params.items():
        if name in skip:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(
                f"non-finite gradient in {name} at optimizer step {state.t}"
            )
        wd = 0.0 if decay_exempt(name) else weight_decay
        K.adamw_update(p, g, state.m[name], state.v[name], lr, BETA1, BETA2, EPS, wd, bc1, bc2)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place to global L2 norm <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise TrainingDivergedError(f"non-finite gradient norm {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


def onecycle_lr(step: int, total_steps: int, max_lr: float, warmup_fraction: float = 0.3) -> float:
    """Cosine ramp max_lr/25 -> max_lr, then cosine decay -> max_lr/1e4.

    Pure function of the (0-based) step; lr at the warmup boundary equals
    max_lr exactly.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = int(round(warmup_fraction * total_steps))
    start = max_lr / INITIAL_DIV
    final = max_lr / FINAL_DIV
    if step < peak:
        frac = 0.5 * (1.0 - math.cos(math.pi * step / peak))
        return start + (max_lr - start) * frac
    if step == peak or peak == total_steps:
        return max_lr
    frac = 0.5 * (1.0 + math.cos(math.pi * (step - peak) / (total_steps - peak)))
    return final + (max_lr - final) * frac


def _epoch_offset(rng, sequence: str, k: int) -> int:
    # one rng draw per record regardless of sequence length, for stream stability
    off = int(rng.integers(k))
    if len(sequence) - off < k:
        return 0
    return off


def write_metrics(path, metrics) -> None:
    with atomic_write(path) as handle:
        handle.write("\t".join(METRICS_HEADER) + "\n")
        for m in metrics:
            handle.write(
                f"{m.epoch}\t{m.step}\t{fmt_float(m.loss)}\t{fmt_float(m.masked_acc)}\t{fmt_float(m.lr)}\n"
            )


def train(
    records,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    checkpoint_dir=None,
    metrics_path=None,
    resume: Checkpoint | None = None,
    log=None,
):
    """Pretrain on `records`; returns (final Checkpoint, list of EpochMetrics).

    When checkpoint_dir is given, a checkpoint is written after every epoch
    (epoch_###.ckpt); on divergence the partial epoch writes nothing, so the
    last completed epoch's file is the recovery point.  metrics_path gets the
    full TSV rewritten atomically after each epoch.
    """
    records = list(records)
    if not records:
        raise DataError("cannot train on an empty record set")
    vocab = mcfg.vocab()
    tok_cfg = mcfg.tokenizer_config()
    mode = "mae" if mcfg.variant == "barcode_mae" else tcfg.corruption

    if resume is not None:
        if resume.model_config != mcfg:
            raise ConfigError("resume checkpoint was trained with a different model config")
        mismatched = [
            f for f in ("batch_size", "max_lr", "weight_decay", "mask_ratio",
                        "warmup_fraction", "grad_clip", "seed", "corruption")
            if getattr(resume.train_config, f) != getattr(tcfg, f)
        ]
        if mismatched:
            raise ConfigError(
                f"resume checkpoint differs in train config fields: {', '.join(mismatched)}"
            )
        params = resume.params.copy()
        opt = AdamState(
            m={k: v.copy() for k, v in resume.opt_m.items()},
            v={k: v.copy() for k, v in resume.opt_v.items()},
            t=resume.step,
        )
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
        step = resume.step
    else:
        params = init_params(mcfg, tcfg.seed)
        opt = init_adam_state(params)
        rng = np.random.default_rng(tcfg.seed)
        start_epoch = 0
        step = 0

    n = len(records)
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch

    metrics: list[EpochMetrics] = []
    ckpt = None
    for epoch in range(start_epoch, tcfg.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        masked_sum = 0
        correct_sum = 0
        lr = 0.0
        for batch_start in range(0, n, tcfg.batch_size):
            batch_records = [records[i] for i in perm[batch_start : batch_start + tcfg.batch_size]]
            seqs = []
            plans = []
            for rec in batch_records:
                off = _epoch_offset(rng, rec.sequence, tok_cfg.k)
                try:
                    ts = tokenize(rec.sequence, tok_cfg, offset=off)
                except ValueError as err:
                    raise DataError(f"record {rec.record_id}: {err}") from err
                seqs.append(ts)
                plans.append(sample_mask(len(ts), tcfg.mask_ratio, rng, mode))
            batch = build_pretrain_batch(seqs, plans, vocab, rng)
            lr = onecycle_lr(step, total_steps, tcfg.max_lr, tcfg.warmup_fraction)
            try:
                loss, cache, stats = forward_pretrain(params, batch, rng=rng)
            except FloatingPointError as err:
                raise TrainingDivergedError(
                    f"{err} at step {step} (epoch {epoch + 1})"
                ) from err
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (epoch {epoch + 1})"
                )
            grads = backward_pretrain(params, batch, cache)
            clip_gradients(grads, tcfg.grad_clip)
            adamw_step(params, grads, opt, lr, tcfg.weight_decay)
            step += 1
            loss_sum += loss * stats["n_masked"]
            masked_sum += stats["n_masked"]
            correct_sum += stats["n_correct"]
        em = EpochMetrics(
            epoch=epoch + 1,
            step=step,
            loss=loss_sum / masked_sum,
            masked_acc=correct_sum / masked_sum,
            lr=lr,
        )
        metrics.append(em)
        if log is not None:
            log(
                f"epoch {em.epoch}/{tcfg.epochs} loss {em.loss:.4f} "
                f"masked_acc {em.masked_acc:.4f} lr {em.lr:.3g}"
            )
        ckpt = Checkpoint(
            model_config=mcfg,
            train_config=tcfg,
            params=params,
            opt_m=opt.m,
            opt_v=opt.v,
            step=step,
            epoch=epoch + 1,
            rng_state=rng.bit_generator.state,
        )
        if checkpoint_dir is not None:
            save_checkpoint(ckpt, f"{checkpoint_dir}/epoch_{epoch + 1:03d}.ckpt")
        if metrics_path is not None:
            write_metrics(metrics_path, metrics)
    if ckpt is None:
        # resume with epochs already complete: hand back the input state
        ckpt = resume
    return ckpt, metrics
