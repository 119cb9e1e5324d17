"""Training-loop behavior: schedule shape, optimizer wiring, determinism,
checkpoint/resume equivalence, and divergence detection."""

import dataclasses
import math

import numpy as np
import pytest

from barcodemae.checkpoint import load_checkpoint
from barcodemae.errors import ConfigError, DataError, TrainingDivergedError
from barcodemae.model import ModelConfig, decay_exempt, init_params
from barcodemae.seqdata import BarcodeRecord, SyntheticCorpusConfig, generate_synthetic, partition_view
from barcodemae.train import (
    AdamState,
    EpochMetrics,
    TrainConfig,
    adamw_step,
    clip_gradients,
    init_adam_state,
    onecycle_lr,
    train,
    write_metrics,
    _epoch_offset,
)


def tiny_cfg(**overrides):
    base = dict(
        variant="barcode_mae",
        enc_layers=1,
        enc_heads=1,
        dec_layers=1,
        dec_heads=1,
        d_model=16,
        d_ff=32,
        k=2,
        max_tokens=32,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_records(n=12, length=40, seed=0):
    rng = np.random.default_rng(seed)
    return [
        BarcodeRecord(
            record_id=f"r{i}",
            sequence="".join(rng.choice(list("ACGT"), size=length)),
            partition="pretrain",
        )
        for i in range(n)
    ]


class TestTrainConfig:
    @pytest.mark.parametrize(
        "field,value",
        [
            ("epochs", 0),
            ("batch_size", 0),
            ("max_lr", 0.0),
            ("max_lr", -1e-4),
            ("grad_clip", 0.0),
            ("weight_decay", -0.1),
            ("mask_ratio", 0.0),
            ("mask_ratio", 1.0),
            ("warmup_fraction", 0.0),
            ("warmup_fraction", 1.0),
            ("corruption", "dropout"),
        ],
    )
    def test_rejects_bad_field(self, field, value):
        with pytest.raises(ConfigError):
            TrainConfig(**{field: value})

    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.epochs == 35
        assert cfg.max_lr == 1e-4
        assert cfg.corruption == "with_mask"


class TestOneCycleSchedule:
    def test_start_is_max_lr_over_25(self):
        assert onecycle_lr(0, 100, 1e-3) == pytest.approx(1e-3 / 25, rel=1e-12)

    def test_peak_is_exactly_max_lr(self):
        peak = int(round(0.3 * 100))
        assert onecycle_lr(peak, 100, 1e-3) == 1e-3

    def test_final_is_max_lr_over_1e4(self):
        assert onecycle_lr(100, 100, 1e-3) == pytest.approx(1e-3 / 1e4, rel=1e-12)

    def test_warmup_monotone_increasing(self):
        vals = [onecycle_lr(s, 200, 5e-4) for s in range(0, 61)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_decay_monotone_decreasing(self):
        vals = [onecycle_lr(s, 200, 5e-4) for s in range(60, 201)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_custom_warmup_fraction_moves_peak(self):
        assert onecycle_lr(10, 100, 1e-3, warmup_fraction=0.1) == 1e-3

    def test_step_out_of_range(self):
        with pytest.raises(ValueError):
            onecycle_lr(-1, 100, 1e-3)
        with pytest.raises(ValueError):
            onecycle_lr(101, 100, 1e-3)

    def test_bad_total_steps(self):
        with pytest.raises(ValueError):
            onecycle_lr(0, 0, 1e-3)

    def test_degenerate_peak_equals_total(self):
        # warmup_fraction ~ 1 rounds the peak to total_steps; lr caps at max
        assert onecycle_lr(2, 2, 1e-3, warmup_fraction=0.99) == 1e-3


class TestClipGradients:
    def test_large_gradients_scaled_to_max_norm(self):
        grads = {"a": np.full(4, 3.0), "b": np.full(9, 4.0)}
        # global norm = sqrt(4*9 + 9*16) = sqrt(180)
        norm = clip_gradients(grads, 1.0)
        assert norm == pytest.approx(math.sqrt(180.0))
        total = sum(float((g**2).sum()) for g in grads.values())
        assert math.sqrt(total) == pytest.approx(1.0, rel=1e-6)
        # direction preserved
        assert grads["a"][0] / grads["b"][0] == pytest.approx(3.0 / 4.0, rel=1e-6)

    def test_small_gradients_untouched(self):
        grads = {"a": np.array([0.1, -0.2])}
        before = grads["a"].copy()
        norm = clip_gradients(grads, 1.0)
        assert norm == pytest.approx(math.sqrt(0.05))
        np.testing.assert_array_equal(grads["a"], before)

    def test_nonfinite_norm_raises(self):
        with pytest.raises(TrainingDivergedError):
            clip_gradients({"a": np.array([np.inf])}, 1.0)


class TestAdamWWiring:
    def test_pure_decay_skips_layer_norm_tensors(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        state = init_adam_state(params)
        zero_grads = {k: np.zeros_like(v) for k, v in params.items()}
        before = {k: v.copy() for k, v in params.items()}
        adamw_step(params, zero_grads, state, lr=0.1, weight_decay=1.0)
        for name, tensor in params.items():
            if decay_exempt(name):
                np.testing.assert_array_equal(tensor, before[name])
            else:
                np.testing.assert_allclose(tensor, before[name] * 0.9, rtol=1e-6)

    def test_sinusoidal_positions_never_updated(self):
        cfg = tiny_cfg(positional="sinusoidal")
        params = init_params(cfg, seed=0)
        state = init_adam_state(params)
        grads = {k: np.ones_like(v) for k, v in params.items()}
        before = params["pos_emb"].copy()
        adamw_step(params, grads, state, lr=0.1, weight_decay=0.01)
        np.testing.assert_array_equal(params["pos_emb"], before)

    def test_nonfinite_gradient_raises(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        state = init_adam_state(params)
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        grads["tok_emb"][0, 0] = np.nan
        with pytest.raises(TrainingDivergedError, match="tok_emb"):
            adamw_step(params, grads, state, lr=0.1, weight_decay=0.0)

    def test_step_counter_increments(self):
        cfg = tiny_cfg()
        params = init_params(cfg, seed=0)
        state = init_adam_state(params)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        adamw_step(params, zero, state, lr=0.1, weight_decay=0.0)
        adamw_step(params, zero, state, lr=0.1, weight_decay=0.0)
        assert state.t == 2


class TestEpochOffset:
    def test_offset_within_frame(self):
        rng = np.random.default_rng(0)
        draws = {_epoch_offset(rng, "ACGT" * 20, 4) for _ in range(200)}
        assert draws == {0, 1, 2, 3}

    def test_short_sequence_falls_back_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert _epoch_offset(rng, "ACG", 3) == 0


class TestTrainLoop:
    def test_metrics_shape_and_numbering(self, tmp_path):
        records = tiny_records()
        ckpt, metrics = train(records, tiny_cfg(), TrainConfig(epochs=3, batch_size=5, max_lr=1e-3))
        assert [m.epoch for m in metrics] == [1, 2, 3]
        steps_per_epoch = math.ceil(len(records) / 5)
        assert [m.step for m in metrics] == [steps_per_epoch * e for e in (1, 2, 3)]
        assert ckpt.epoch == 3
        assert ckpt.step == 3 * steps_per_epoch
        assert all(math.isfinite(m.loss) for m in metrics)
        assert all(0.0 <= m.masked_acc <= 1.0 for m in metrics)

    def test_loss_decreases_on_structured_corpus(self):
        corpus = generate_synthetic(
            SyntheticCorpusConfig(
                n_genera=2, species_per_genus=2, records_per_species=8, seq_len=96
            ),
            seed=3,
        )
        records = partition_view(corpus, "pretrain")
        _, metrics = train(
            records,
            tiny_cfg(d_model=32, d_ff=64),
            TrainConfig(epochs=8, batch_size=8, max_lr=2e-3),
        )
        assert metrics[-1].loss < metrics[0].loss

    def test_pad_embedding_row_stays_zero(self):
        cfg = tiny_cfg()
        ckpt, _ = train(tiny_records(), cfg, TrainConfig(epochs=2, batch_size=4, max_lr=1e-3))
        pad_row = ckpt.params["tok_emb"][cfg.vocab().pad_id]
        np.testing.assert_array_equal(pad_row, np.zeros_like(pad_row))

    def test_fixed_seed_bit_identical(self):
        records = tiny_records()
        cfg = tiny_cfg()
        tcfg = TrainConfig(epochs=2, batch_size=4, max_lr=1e-3, seed=9)
        ck1, m1 = train(records, cfg, tcfg)
        ck2, m2 = train(records, cfg, tcfg)
        assert m1 == m2
        for name in ck1.params.names():
            np.testing.assert_array_equal(ck1.params[name], ck2.params[name])

    def test_different_seed_differs(self):
        records = tiny_records()
        cfg = tiny_cfg()
        ck1, _ = train(records, cfg, TrainConfig(epochs=1, batch_size=4, max_lr=1e-3, seed=0))
        ck2, _ = train(records, cfg, TrainConfig(epochs=1, batch_size=4, max_lr=1e-3, seed=1))
        assert any(
            not np.array_equal(ck1.params[n], ck2.params[n]) for n in ck1.params.names()
        )

    def test_empty_records_raise(self):
        with pytest.raises(DataError):
            train([], tiny_cfg(), TrainConfig(epochs=1))

    def test_too_short_record_names_culprit(self):
        records = tiny_records(n=4)
        records.append(BarcodeRecord(record_id="stub", sequence="A", partition="pretrain"))
        with pytest.raises(DataError, match="stub"):
            train(records, tiny_cfg(), TrainConfig(epochs=1, batch_size=4))

    def test_bert_corruption_requires_non_mae_variant(self):
        # barcode_mae always uses removal-mode masking; the corruption knob
        # applies to the other variants, and bert_80_10_10 trains without error
        records = tiny_records()
        cfg = tiny_cfg(variant="mae_with_mask")
        tcfg = TrainConfig(epochs=1, batch_size=4, max_lr=1e-3, corruption="bert_80_10_10")
        ckpt, metrics = train(records, cfg, tcfg)
        assert metrics[0].loss > 0


class TestCheckpointingAndResume:
    def test_checkpoints_written_per_epoch(self, tmp_path):
        train(
            tiny_records(),
            tiny_cfg(),
            TrainConfig(epochs=3, batch_size=4, max_lr=1e-3),
            checkpoint_dir=tmp_path,
        )
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["epoch_001.ckpt", "epoch_002.ckpt", "epoch_003.ckpt"]

    def test_metrics_tsv_written(self, tmp_path):
        path = tmp_path / "metrics.tsv"
        _, metrics = train(
            tiny_records(),
            tiny_cfg(),
            TrainConfig(epochs=2, batch_size=4, max_lr=1e-3),
            metrics_path=path,
        )
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch\tstep\tloss\tmasked_acc\tlr"
        assert len(lines) == 3
        row = lines[1].split("\t")
        assert int(row[0]) == 1
        assert float(row[2]) == pytest.approx(metrics[0].loss, rel=1e-8)

    def test_resume_matches_uninterrupted_run_bitwise(self, tmp_path):
        records = tiny_records()
        cfg = tiny_cfg()
        tcfg = TrainConfig(epochs=4, batch_size=4, max_lr=1e-3, seed=7)
        full_ck, full_metrics = train(records, cfg, tcfg, checkpoint_dir=tmp_path / "full")
        mid = load_checkpoint(tmp_path / "full" / "epoch_002.ckpt")
        resumed_ck, resumed_metrics = train(records, cfg, tcfg, resume=mid)
        assert [m.epoch for m in resumed_metrics] == [3, 4]
        assert resumed_metrics == full_metrics[2:]
        for name in full_ck.params.names():
            np.testing.assert_array_equal(resumed_ck.params[name], full_ck.params[name])
        assert resumed_ck.rng_state == full_ck.rng_state

    def test_resume_rejects_model_config_mismatch(self, tmp_path):
        records = tiny_records()
        tcfg = TrainConfig(epochs=2, batch_size=4, max_lr=1e-3)
        ck, _ = train(records, tiny_cfg(), tcfg, checkpoint_dir=tmp_path)
        mid = load_checkpoint(tmp_path / "epoch_001.ckpt")
        with pytest.raises(ConfigError):
            train(records, tiny_cfg(d_model=32, d_ff=64), tcfg, resume=mid)

    def test_resume_rejects_train_config_mismatch(self, tmp_path):
        records = tiny_records()
        tcfg = TrainConfig(epochs=2, batch_size=4, max_lr=1e-3)
        train(records, tiny_cfg(), tcfg, checkpoint_dir=tmp_path)
        mid = load_checkpoint(tmp_path / "epoch_001.ckpt")
        with pytest.raises(ConfigError, match="max_lr"):
            train(records, tiny_cfg(), dataclasses.replace(tcfg, max_lr=5e-4), resume=mid)

    def test_resume_with_no_remaining_epochs_returns_input(self, tmp_path):
        records = tiny_records()
        tcfg = TrainConfig(epochs=2, batch_size=4, max_lr=1e-3)
        train(records, tiny_cfg(), tcfg, checkpoint_dir=tmp_path)
        done = load_checkpoint(tmp_path / "epoch_002.ckpt")
        ck, metrics = train(records, tiny_cfg(), tcfg, resume=done)
        assert metrics == []
        assert ck.epoch == 2

    def test_poisoned_resume_raises_diverged(self, tmp_path):
        records = tiny_records()
        tcfg = TrainConfig(epochs=2, batch_size=4, max_lr=1e-3)
        train(records, tiny_cfg(), tcfg, checkpoint_dir=tmp_path)
        mid = load_checkpoint(tmp_path / "epoch_001.ckpt")
        mid.params.tensors["tok_emb"][:] = np.nan
        with pytest.raises(TrainingDivergedError):
            train(records, tiny_cfg(), tcfg, resume=mid)


class TestWriteMetrics:
    def test_round_trip_values(self, tmp_path):
        path = tmp_path / "m.tsv"
        rows = [
            EpochMetrics(epoch=1, step=10, loss=2.5, masked_acc=0.125, lr=0.0004),
            EpochMetrics(epoch=2, step=20, loss=1.25, masked_acc=0.5, lr=0.001),
        ]
        write_metrics(path, rows)
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        got = lines[2].split("\t")
        assert got[0] == "2"
        assert got[1] == "20"
        assert float(got[2]) == 1.25
        assert float(got[3]) == 0.5
        assert float(got[4]) == 0.001
