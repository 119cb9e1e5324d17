"""Command-line pipelines: generate, pretrain, embed, eval, ablate.

Option resolution, lowest to highest precedence: built-in defaults, a
--preset, a --config file of flat ``key = value`` lines (``#`` comments),
then explicit flags.  The seed falls back to the BARCODEMAE_SEED environment
variable when neither file nor flag sets it.  All outputs are TSV under
``<out>/<name>/{checkpoints,metrics,embeddings,results}``, written
atomically, with no timestamps, so re-running a command reproduces its
output files byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .checkpoint import load_checkpoint
from .errors import BarcodeMaeError, ConfigError
from .evalsuite import (
    bin_reconstruction_eval,
    harmonic_mean,
    knn_probe,
    robustness_sweep,
    save_embeddings,
)
from .ioutil import atomic_write, fmt_float
from .model import ModelConfig, embed_corpus
from .seqdata import (
    PARTITIONS,
    RecordSet,
    SyntheticCorpusConfig,
    generate_synthetic,
    load_records,
    save_records,
)
from .train import TrainConfig, train

_INT_KEYS = {
    "k", "max_tokens", "enc_layers", "enc_heads", "dec_layers", "dec_heads",
    "d_model", "d_ff", "epochs", "batch_size", "seed", "target_dim",
}
_FLOAT_KEYS = {
    "dropout", "max_lr", "weight_decay", "mask_ratio", "warmup_fraction", "grad_clip",
}
_BOOL_KEYS = {"tie_output_embeddings"}

DEFAULTS = {
    "data": None,
    "out": "run",
    "name": "default",
    "k": 4,
    "max_tokens": 128,
    "variant": "barcode_mae",
    "enc_layers": 2,
    "enc_heads": 2,
    "dec_layers": 2,
    "dec_heads": 2,
    "d_model": 64,
    "d_ff": 256,
    "dropout": 0.1,
    "positional": "learned",
    "tie_output_embeddings": False,
    "epochs": 35,
    "batch_size": 32,
    "max_lr": 1e-4,
    "weight_decay": 1e-5,
    "mask_ratio": 0.5,
    "warmup_fraction": 0.3,
    "grad_clip": 1.0,
    "corruption": "with_mask",
    "seed": None,
    "partition": "all",
    "reference": "seen_train",
    "query": "unseen_test",
    "level": "genus",
    "target_dim": 50,
    "ratios": "0.0:0.9:0.1",
    "modes": "mask,delete",
}

PRESETS = {
    # main-text setting: peak learning rate 1e-4
    "method": {"max_lr": 1e-4},
    # appendix setting: lr 2e-4, batch 128, 35 epochs
    "appendix": {"max_lr": 2e-4, "batch_size": 128, "epochs": 35},
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved option set for one command invocation."""

    values: dict
    explicit: frozenset

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def run_dir(self) -> Path:
        return Path(self.values["out"]) / self.values["name"]


def _coerce(key: str, raw: str):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")
    return raw


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def parse_arch(text: str):
    """Parse "enc:L-H dec:M-J" into (enc_layers, enc_heads, dec_layers, dec_heads)."""
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ConfigError(f'arch must look like "enc:L-H dec:M-J", got {text!r}')
    out = {}
    for token, label in zip(parts, ("enc", "dec")):
        prefix, _, body = token.partition(":")
        layers, sep, heads = body.partition("-")
        if prefix != label or not sep or not layers.isdigit() or not heads.isdigit():
            raise ConfigError(
                f"malformed arch token {token!r} (expected {label}:LAYERS-HEADS)"
            )
        out[label] = (int(layers), int(heads))
    return out["enc"] + out["dec"]


def parse_ratios(text: str) -> list:
    """Either "start:stop:step" (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        pieces = text.split(":")
        if len(pieces) != 3:
            raise ConfigError(f"ratio range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in pieces)
        if step <= 0 or stop < start:
            raise ConfigError(f"bad ratio range {text!r}")
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    explicit = set()

    preset = getattr(args, "preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (have {', '.join(PRESETS)})")
        values.update(PRESETS[preset])
        explicit.update(PRESETS[preset])
    config_path = getattr(args, "config", None)
    if config_path is not None:
        file_values = read_config_file(config_path)
        values.update(file_values)
        explicit.update(file_values)
    arch = getattr(args, "arch", None)
    if arch is not None:
        el, eh, dl, dh = parse_arch(arch)
        values.update(enc_layers=el, enc_heads=eh, dec_layers=dl, dec_heads=dh)
        explicit.update(("enc_layers", "enc_heads", "dec_layers", "dec_heads"))
    for key in DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
            explicit.add(key)

    if values["seed"] is None:
        env_seed = os.environ.get("BARCODEMAE_SEED")
        values["seed"] = int(env_seed) if env_seed else 0
    if isinstance(values.get("variant"), str):
        values["variant"] = values["variant"].replace("-", "_")
    if values["variant"] == "encoder_only" and "dec_layers" not in explicit:
        values["dec_layers"] = 0
    return RunConfig(values=values, explicit=frozenset(explicit))


def model_config(rc: RunConfig) -> ModelConfig:
    return ModelConfig(
        variant=rc.variant,
        enc_layers=rc.enc_layers,
        enc_heads=rc.enc_heads,
        dec_layers=rc.dec_layers,
        dec_heads=rc.dec_heads,
        d_model=rc.d_model,
        d_ff=rc.d_ff,
        k=rc.k,
        max_tokens=rc.max_tokens,
        dropout=rc.dropout,
        positional=rc.positional,
        tie_output_embeddings=rc.tie_output_embeddings,
    )


def train_config(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=rc.epochs,
        batch_size=rc.batch_size,
        max_lr=rc.max_lr,
        weight_decay=rc.weight_decay,
        mask_ratio=rc.mask_ratio,
        warmup_fraction=rc.warmup_fraction,
        grad_clip=rc.grad_clip,
        seed=rc.seed,
        corruption=rc.corruption,
    )


def _load_partition(path, partition: str) -> RecordSet:
    records = load_records(path)
    if partition in ("all", "", None):
        return records
    names = [p.strip() for p in partition.split(",") if p.strip()]
    for name in names:
        if name not in PARTITIONS:
            raise ConfigError(f"unknown partition {name!r}")
    wanted = set(names)
    return RecordSet(
        [r for r in records if r.partition in wanted],
        provenance=records.provenance,
        seed=records.seed,
    )


def _write_kv_tsv(path, pairs) -> None:
    with atomic_write(path) as handle:
        handle.write("metric\tvalue\n")
        for key, value in pairs:
            handle.write(f"{key}\t{value}\n")


def _read_kv_tsv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as handle:
        header = handle.readline()
        if not header.startswith("metric\t"):
            raise ConfigError(f"{path}: not a metric TSV")
        for line in handle:
            key, _, value = line.rstrip("\n").partition("\t")
            out[key] = value
    return out


def cmd_generate(args) -> int:
    cfg = SyntheticCorpusConfig(
        n_genera=args.genera,
        species_per_genus=args.species,
        records_per_species=args.records,
        seq_len=args.seq_len,
        genus_divergence=args.genus_divergence,
        species_divergence=args.species_divergence,
        noise_rate=args.noise_rate,
        unseen_species_fraction=args.unseen_fraction,
    )
    records = generate_synthetic(cfg, seed=args.seed)
    save_records(records, args.output)
    print(f"wrote {len(records)} records to {args.output}")
    return 0


def cmd_pretrain(args) -> int:
    rc = resolve_config(args)
    if rc.data is None:
        raise ConfigError("pretrain needs --data (or data in the config file)")
    records = _load_partition(rc.data, rc.partition)
    mcfg = model_config(rc)
    tcfg = train_config(rc)
    resume = load_checkpoint(args.resume) if args.resume else None
    run_dir = rc.run_dir()
    ckpt, metrics = train(
        records,
        mcfg,
        tcfg,
        checkpoint_dir=run_dir / "checkpoints",
        metrics_path=run_dir / "metrics" / "pretrain.tsv",
        resume=resume,
        log=print,
    )
    print(f"final checkpoint: {run_dir / 'checkpoints' / f'epoch_{ckpt.epoch:03d}.ckpt'}")
    return 0


def cmd_embed(args) -> int:
    rc = resolve_config(args)
    if rc.data is None:
        raise ConfigError("embed needs --data")
    ckpt = load_checkpoint(args.checkpoint)
    records = _load_partition(rc.data, rc.partition)
    emb = embed_corpus(ckpt.params, records)
    out = Path(args.output) if args.output else rc.run_dir() / "embeddings" / "embeddings.tsv"
    save_embeddings(emb, out)
    print(f"wrote {len(emb)} embeddings to {out}")
    return 0


def _probe_from_args(rc: RunConfig, ckpt):
    reference = embed_corpus(ckpt.params, _load_partition(rc.data, rc.reference))
    query = embed_corpus(ckpt.params, _load_partition(rc.data, rc.query))
    return knn_probe(reference, query, rc.level)


def cmd_eval_knn(args) -> int:
    rc = resolve_config(args)
    if rc.data is None:
        raise ConfigError("eval knn needs --data")
    ckpt = load_checkpoint(args.checkpoint)
    probe = _probe_from_args(rc, ckpt)
    out = Path(args.output) if args.output else rc.run_dir() / "results" / "knn.tsv"
    pairs = [
        ("accuracy", fmt_float(probe.accuracy)),
        ("n_queries", probe.n_queries),
        ("level", rc.level),
        ("reference", rc.reference),
        ("query", rc.query),
    ]
    pairs += [(f"acc.{label}", fmt_float(v)) for label, v in probe.per_label.items()]
    _write_kv_tsv(out, pairs)
    print(f"knn {rc.level} accuracy {probe.accuracy:.4f} (n={probe.n_queries})")
    return 0


def cmd_eval_zsc(args) -> int:
    rc = resolve_config(args)
    if rc.data is None:
        raise ConfigError("eval zsc needs --data")
    ckpt = load_checkpoint(args.checkpoint)
    partitions = args.partitions or "seen_test,unseen_test"
    records = _load_partition(rc.data, partitions)
    result = bin_reconstruction_eval(ckpt.params, records, target_dim=rc.target_dim)
    out = Path(args.output) if args.output else rc.run_dir() / "results" / "zsc.tsv"
    _write_kv_tsv(
        out,
        [
            ("ami", fmt_float(result.ami)),
            ("n_clusters", result.n_clusters),
            ("n_records", len(result.record_ids)),
            ("partitions", partitions),
        ],
    )
    assign_path = out.with_name(out.stem + "_assignment.tsv")
    with atomic_write(assign_path) as handle:
        handle.write("record_id\tcluster\n")
        for rid, cluster in zip(result.record_ids, result.assignment):
            handle.write(f"{rid}\t{cluster}\n")
    print(f"zsc ami {result.ami:.4f} over {result.n_clusters} clusters")
    return 0


def cmd_eval_robustness(args) -> int:
    rc = resolve_config(args)
    if rc.data is None:
        raise ConfigError("eval robustness needs --data")
    ckpt = load_checkpoint(args.checkpoint)
    ratios = parse_ratios(rc.ratios)
    mode_names = {"mask": "mask_substitute", "mask_substitute": "mask_substitute", "delete": "delete"}
    modes = []
    for raw in rc.modes.split(","):
        raw = raw.strip()
        if raw not in mode_names:
            raise ConfigError(f"unknown robustness mode {raw!r} (use mask,delete)")
        modes.append(mode_names[raw])
    reference = embed_corpus(ckpt.params, _load_partition(rc.data, rc.reference))
    query_records = _load_partition(rc.data, rc.query)
    out = Path(args.output) if args.output else rc.run_dir() / "results" / "robustness.tsv"
    rows = []
    for mode in modes:
        curve = robustness_sweep(
            ckpt.params,
            reference,
            query_records,
            ratios=ratios,
            mode=mode,
            label_level=rc.level,
            seed=rc.seed,
        )
        for ratio, acc in curve.points:
            rows.append((mode, fmt_float(ratio), fmt_float(acc)))
        print(f"robustness {mode}: " + " ".join(f"{a:.3f}" for _, a in curve.points))
    with atomic_write(out) as handle:
        handle.write("mode\tratio\taccuracy\n")
        for row in rows:
            handle.write("\t".join(str(c) for c in row) + "\n")
    return 0


def cmd_eval_report(args) -> int:
    rc = resolve_config(args)
    knn_path = Path(args.knn) if args.knn else rc.run_dir() / "results" / "knn.tsv"
    zsc_path = Path(args.zsc) if args.zsc else rc.run_dir() / "results" / "zsc.tsv"
    knn_values = _read_kv_tsv(knn_path)
    zsc_values = _read_kv_tsv(zsc_path)
    acc_pct = float(knn_values["accuracy"]) * 100.0
    ami_pct = float(zsc_values["ami"]) * 100.0
    hmean = harmonic_mean(acc_pct, max(ami_pct, 0.0))
    out = Path(args.output) if args.output else rc.run_dir() / "results" / "report.tsv"
    _write_kv_tsv(
        out,
        [
            ("genus_accuracy_pct", fmt_float(acc_pct)),
            ("zsc_ami_pct", fmt_float(ami_pct)),
            ("harmonic_mean_pct", fmt_float(hmean)),
        ],
    )
    print(f"harmonic mean {hmean:.1f} (acc {acc_pct:.1f}, ami {ami_pct:.1f})")
    return 0


def cmd_ablate(args) -> int:
    rc = resolve_config(args)
    if rc.data is None:
        raise ConfigError("ablate needs --data")
    arch_specs = [a.strip() for a in args.arches.split(";") if a.strip()]
    if not arch_specs:
        raise ConfigError("ablate needs at least one arch in --arches")
    ks = [int(v) for v in args.ks.split(",") if v.strip()]
    train_records = _load_partition(rc.data, rc.partition)
    run_dir = rc.run_dir()
    rows = []
    for spec in arch_specs:
        el, eh, dl, dh = parse_arch(spec)
        for k in ks:
            tag = f"enc{el}-{eh}_dec{dl}-{dh}_k{k}"
            values = dict(
                rc.values,
                enc_layers=el, enc_heads=eh, dec_layers=dl, dec_heads=dh, k=k,
            )
            sub = RunConfig(values=values, explicit=rc.explicit)
            mcfg = model_config(sub)
            tcfg = train_config(sub)
            ckpt, _ = train(
                train_records,
                mcfg,
                tcfg,
                checkpoint_dir=run_dir / "checkpoints" / tag,
                metrics_path=run_dir / "metrics" / f"pretrain_{tag}.tsv",
            )
            reference = embed_corpus(ckpt.params, _load_partition(rc.data, rc.reference))
            query = embed_corpus(ckpt.params, _load_partition(rc.data, rc.query))
            probe = knn_probe(reference, query, rc.level)
            zsc_records = _load_partition(rc.data, "seen_test,unseen_test")
            zsc = bin_reconstruction_eval(ckpt.params, zsc_records, target_dim=rc.target_dim)
            hmean = harmonic_mean(probe.accuracy * 100.0, max(zsc.ami, 0.0) * 100.0)
            rows.append(
                (
                    f"enc:{el}-{eh} dec:{dl}-{dh}",
                    k,
                    fmt_float(probe.accuracy),
                    fmt_float(zsc.ami),
                    fmt_float(hmean),
                )
            )
            print(f"{tag}: acc {probe.accuracy:.4f} ami {zsc.ami:.4f} hmean {hmean:.1f}")
    out = run_dir / "results" / "ablation.tsv"
    with atomic_write(out) as handle:
        handle.write("arch\tk\tgenus_accuracy\tzsc_ami\tharmonic_mean_pct\n")
        for row in rows:
            handle.write("\t".join(str(c) for c in row) + "\n")
    print(f"wrote {len(rows)} ablation rows to {out}")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--preset", help="named option preset (method, appendix)")
    parser.add_argument("--out", help="output root directory (default run)")
    parser.add_argument("--name", help="run name under the output root")
    parser.add_argument("--seed", type=int, help="rng seed (env BARCODEMAE_SEED as fallback)")
    parser.add_argument("--data", help="records TSV or FASTA")


def _add_model_flags(parser):
    parser.add_argument("--variant", help="barcode-mae, mae-with-mask, or encoder-only")
    parser.add_argument("--arch", help='architecture string "enc:L-H dec:M-J"')
    parser.add_argument("--enc-layers", type=int, dest="enc_layers")
    parser.add_argument("--enc-heads", type=int, dest="enc_heads")
    parser.add_argument("--dec-layers", type=int, dest="dec_layers")
    parser.add_argument("--dec-heads", type=int, dest="dec_heads")
    parser.add_argument("--d-model", type=int, dest="d_model")
    parser.add_argument("--d-ff", type=int, dest="d_ff")
    parser.add_argument("--k", type=int)
    parser.add_argument("--max-tokens", type=int, dest="max_tokens")
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--positional", help="learned or sinusoidal")
    parser.add_argument(
        "--tie-head",
        action="store_const",
        const=True,
        dest="tie_output_embeddings",
        help="share token embeddings with the output head",
    )


def _add_train_flags(parser):
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--lr", type=float, dest="max_lr")
    parser.add_argument("--weight-decay", type=float, dest="weight_decay")
    parser.add_argument("--mask-ratio", type=float, dest="mask_ratio")
    parser.add_argument("--warmup", type=float, dest="warmup_fraction")
    parser.add_argument("--grad-clip", type=float, dest="grad_clip")
    parser.add_argument("--corruption", help="with_mask or bert_80_10_10")
    parser.add_argument("--partition", help="training partitions (default all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="barcodemae",
        description="Masked-autoencoder pretraining and evaluation for DNA barcodes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic barcode corpus")
    gen.add_argument("--genera", type=int, default=4)
    gen.add_argument("--species", type=int, default=3)
    gen.add_argument("--records", type=int, default=10)
    gen.add_argument("--seq-len", type=int, default=256, dest="seq_len")
    gen.add_argument("--genus-divergence", type=float, default=0.30, dest="genus_divergence")
    gen.add_argument("--species-divergence", type=float, default=0.10, dest="species_divergence")
    gen.add_argument("--noise-rate", type=float, default=0.02, dest="noise_rate")
    gen.add_argument("--unseen-fraction", type=float, default=0.25, dest="unseen_fraction")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--output", required=True)
    gen.set_defaults(func=cmd_generate)

    pre = sub.add_parser("pretrain", help="run masked pretraining")
    _add_common(pre)
    _add_model_flags(pre)
    _add_train_flags(pre)
    pre.add_argument("--resume", help="checkpoint to resume from")
    pre.set_defaults(func=cmd_pretrain)

    emb = sub.add_parser("embed", help="embed records under a checkpoint")
    _add_common(emb)
    emb.add_argument("--checkpoint", required=True)
    emb.add_argument("--partition", help="partition filter (default all)")
    emb.add_argument("-o", "--output")
    emb.set_defaults(func=cmd_embed)

    ev = sub.add_parser("eval", help="downstream evaluations")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)

    knn = ev_sub.add_parser("knn", help="cosine 1-NN label probe")
    _add_common(knn)
    knn.add_argument("--checkpoint", required=True)
    knn.add_argument("--reference", help="reference partition (default seen_train)")
    knn.add_argument("--query", help="query partition (default unseen_test)")
    knn.add_argument("--level", help="genus or species")
    knn.add_argument("-o", "--output")
    knn.set_defaults(func=cmd_eval_knn)

    zsc = ev_sub.add_parser("zsc", help="zero-shot bin clustering")
    _add_common(zsc)
    zsc.add_argument("--checkpoint", required=True)
    zsc.add_argument("--partitions", help="comma-joined partitions (default seen_test,unseen_test)")
    zsc.add_argument("--target-dim", type=int, dest="target_dim")
    zsc.add_argument("-o", "--output")
    zsc.set_defaults(func=cmd_eval_zsc)

    rob = ev_sub.add_parser("robustness", help="masking/deletion sweep")
    _add_common(rob)
    rob.add_argument("--checkpoint", required=True)
    rob.add_argument("--modes", help="comma list from {mask, delete}")
    rob.add_argument("--ratios", help='"start:stop:step" or comma list')
    rob.add_argument("--reference", help="reference partition (default seen_train)")
    rob.add_argument("--query", help="query partition (default unseen_test)")
    rob.add_argument("--level", help="genus or species")
    rob.add_argument("-o", "--output")
    rob.set_defaults(func=cmd_eval_robustness)

    rep = ev_sub.add_parser("report", help="harmonic mean of knn and zsc results")
    _add_common(rep)
    rep.add_argument("--knn", help="knn result TSV (default from run dir)")
    rep.add_argument("--zsc", help="zsc result TSV (default from run dir)")
    rep.add_argument("-o", "--output")
    rep.set_defaults(func=cmd_eval_report)

    abl = sub.add_parser("ablate", help="train and evaluate an architecture grid")
    _add_common(abl)
    _add_model_flags(abl)
    _add_train_flags(abl)
    abl.add_argument("--arches", required=True, help='semicolon-joined "enc:L-H dec:M-J" specs')
    abl.add_argument("--ks", required=True, help="comma-joined k values")
    abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BarcodeMaeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
