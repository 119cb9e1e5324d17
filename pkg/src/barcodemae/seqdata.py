"""Barcode record ingestion, partitions, and synthetic corpus generation.

On-disk canonical format is TSV with the header
``record_id  sequence  genus  species  bin_id  partition`` (tab-separated,
empty string for missing optionals).  FASTA input is also accepted with
``>id|genus|species`` headers.

Synthetic corpora follow a three-level mutation hierarchy (root -> genus
ancestor -> species prototype -> record) so that within-species similarity
exceeds within-genus similarity, which exceeds across-genus similarity.  A
configurable fraction of species per genus is held out into the unseen_*
partitions while their genus stays represented in seen_train, which is what
the open-world probes rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .ioutil import atomic_write

ALPHABET = frozenset("ACGTN-")

PARTITIONS = (
    "pretrain",
    "seen_train",
    "seen_val",
    "seen_test",
    "unseen_keys",
    "unseen_val",
    "unseen_test",
)

_LABELED_PARTITIONS = frozenset(p for p in PARTITIONS if p != "pretrain")

TSV_HEADER = ("record_id", "sequence", "genus", "species", "bin_id", "partition")


@dataclass(frozen=True)
class BarcodeRecord:
    """One specimen: nucleotide string plus taxonomic labels and a partition tag."""

    record_id: str
    sequence: str
    genus: str | None = None
    species: str | None = None
    bin_id: str | None = None
    partition: str = "pretrain"

    def __post_init__(self):
        object.__setattr__(self, "sequence", self.sequence.upper())
        if not self.record_id:
            raise DataError("record_id must be non-empty")
        if not self.sequence:
            raise DataError(f"record {self.record_id}: sequence is empty")
        for ch in self.sequence:
            if ch not in ALPHABET:
                raise DataError(
                    f"record {self.record_id}: illegal character {ch!r} in sequence"
                )
        if self.partition not in PARTITIONS:
            raise DataError(
                f"record {self.record_id}: unknown partition {self.partition!r}"
            )
        if self.partition in _LABELED_PARTITIONS and not self.genus:
            raise DataError(
                f"record {self.record_id}: partition {self.partition} requires a genus label"
            )


class RecordSet:
    """Immutable ordered collection of records with unique ids."""

    def __init__(self, records, provenance: str = "file", seed: int | None = None):
        records = tuple(records)
        seen = set()
        for rec in records:
            if rec.record_id in seen:
                raise DataError(f"duplicate record_id {rec.record_id!r}")
            seen.add(rec.record_id)
        self.records = records
        self.provenance = provenance
        self.seed = seed

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]


def partition_view(record_set: RecordSet, partition: str) -> RecordSet:
    """Order-preserving filter to one partition.  Empty results are fine."""
    if partition not in PARTITIONS:
        raise ConfigError(f"unknown partition {partition!r}")
    kept = [r for r in record_set if r.partition == partition]
    return RecordSet(kept, provenance=record_set.provenance, seed=record_set.seed)


def _parse_tsv(path: Path) -> list[BarcodeRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        header_line = handle.readline()
        if not header_line:
            raise DataError(f"{path}: empty file, expected a header row")
        header = header_line.rstrip("\n").split("\t")
        try:
            col = {name: header.index(name) for name in header}
        except ValueError:  # pragma: no cover - index over its own entries
            raise DataError(f"{path}: unreadable header")
        for required in ("record_id", "sequence"):
            if required not in col:
                raise DataError(f"{path}: header is missing column {required!r}")
        for lineno, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if len(cells) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(cells)}"
                )

            def cell(name, default=""):
                return cells[col[name]] if name in col else default

            try:
                records.append(
                    BarcodeRecord(
                        record_id=cell("record_id"),
                        sequence=cell("sequence"),
                        genus=cell("genus") or None,
                        species=cell("species") or None,
                        bin_id=cell("bin_id") or None,
                        partition=cell("partition") or "pretrain",
                    )
                )
            except DataError as err:
                raise DataError(f"{path}: line {lineno}: {err}") from err
    return records


def _parse_fasta(path: Path) -> list[BarcodeRecord]:
    records = []
    header: str | None = None
    chunks: list[str] = []
    header_lineno = 0

    def flush():
        if header is None:
            return
        parts = header.split("|")
        record_id = parts[0].strip()
        genus = parts[1].strip() if len(parts) > 1 and parts[1].strip() else None
        species = parts[2].strip() if len(parts) > 2 and parts[2].strip() else None
        try:
            records.append(
                BarcodeRecord(
                    record_id=record_id,
                    sequence="".join(chunks),
                    genus=genus,
                    species=species,
                )
            )
        except DataError as err:
            raise DataError(f"{path}: line {header_lineno}: {err}") from err

    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                flush()
                header = line[1:]
                header_lineno = lineno
                chunks = []
            else:
                if header is None:
                    raise DataError(f"{path}: line {lineno}: sequence before any header")
                chunks.append(line)
    flush()
    return records


def load_records(path, format: str | None = None) -> RecordSet:
    """Load a RecordSet from TSV or FASTA.

    With format=None the extension decides (.fa/.fasta/.fna -> fasta,
    anything else -> tsv).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if format is None:
        format = "fasta" if path.suffix.lower() in (".fa", ".fasta", ".fna") else "tsv"
    if format == "tsv":
        records = _parse_tsv(path)
    elif format == "fasta":
        records = _parse_fasta(path)
    else:
        raise ConfigError(f"unknown format {format!r}")
    return RecordSet(records, provenance="file")


def save_records(record_set: RecordSet, path) -> None:
    """Write canonical TSV.  load_records inverts this bit-exactly."""
    with atomic_write(path) as handle:
        handle.write("\t".join(TSV_HEADER) + "\n")
        for rec in record_set:
            handle.write(
                "\t".join(
                    (
                        rec.record_id,
                        rec.sequence,
                        rec.genus or "",
                        rec.species or "",
                        rec.bin_id or "",
                        rec.partition,
                    )
                )
                + "\n"
            )


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_genera: int
    species_per_genus: int
    records_per_species: int
    seq_len: int
    genus_divergence: float = 0.30
    species_divergence: float = 0.10
    noise_rate: float = 0.02
    unseen_species_fraction: float = 0.25

    def __post_init__(self):
        for name in ("n_genera", "species_per_genus", "records_per_species", "seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("genus_divergence", "species_divergence", "noise_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {rate}")
        if not self.species_divergence < self.genus_divergence:
            raise ConfigError(
                "species_divergence must be < genus_divergence "
                f"({self.species_divergence} vs {self.genus_divergence})"
            )
        if not self.noise_rate < self.species_divergence:
            raise ConfigError(
                "noise_rate must be < species_divergence "
                f"({self.noise_rate} vs {self.species_divergence})"
            )
        if not 0.0 <= self.unseen_species_fraction < 1.0:
            raise ConfigError("unseen_species_fraction must be in [0, 1)")


# per-species record allocation across partitions
_SEEN_SPLIT = (("pretrain", 0.40), ("seen_train", 0.30), ("seen_val", 0.15), ("seen_test", 0.15))
_UNSEEN_SPLIT = (("pretrain", 0.40), ("unseen_keys", 0.20), ("unseen_val", 0.20), ("unseen_test", 0.20))


def _largest_remainder(total: int, fractions) -> list[int]:
    quotas = [total * f for _, f in fractions]
    counts = [int(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    leftover = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _mutate(seq: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    hit = rng.random(len(seq)) < rate
    out = seq.copy()
    shifts = rng.integers(1, 4, size=int(hit.sum()))
    out[hit] = (out[hit] + shifts) % 4
    return out


def generate_synthetic(config: SyntheticCorpusConfig, seed: int) -> RecordSet:
    """Deterministic synthetic corpus with known taxonomy.

    bin_id equals the species label, so a perfect clustering of the corpus by
    species scores AMI exactly 1 against bin labels.
    """
    rng = np.random.default_rng(seed)
    bases = np.array(list("ACGT"))
    root = rng.integers(0, 4, size=config.seq_len)
    records = []
    for g in range(config.n_genera):
        genus = f"G{g:02d}"
        ancestor = _mutate(root, config.genus_divergence, rng)
        n_unseen = min(
            config.species_per_genus - 1,
            round(config.unseen_species_fraction * config.species_per_genus),
        )
        unseen_idx = set(
            rng.choice(config.species_per_genus, size=n_unseen, replace=False).tolist()
        )
        for s in range(config.species_per_genus):
            species = f"{genus}S{s:02d}"
            prototype = _mutate(ancestor, config.species_divergence, rng)
            split = _UNSEEN_SPLIT if s in unseen_idx else _SEEN_SPLIT
            counts = _largest_remainder(config.records_per_species, split)
            if s not in unseen_idx and counts[1] == 0:
                # every seen species must reach seen_train so its genus is referenced
                donor = max(range(len(counts)), key=lambda i: (counts[i], -i))
                counts[donor] -= 1
                counts[1] += 1
            if s in unseen_idx and sum(counts[1:]) == 0:
                counts[0] -= 1
                counts[3] += 1
            partitions = [
                name for (name, _), c in zip(split, counts) for _ in range(c)
            ]
            for r in range(config.records_per_species):
                seq_codes = _mutate(prototype, config.noise_rate, rng)
                records.append(
                    BarcodeRecord(
                        record_id=f"{species}R{r:03d}",
                        sequence="".join(bases[seq_codes]),
                        genus=genus,
                        species=species,
                        bin_id=species,
                        partition=partitions[r],
                    )
                )
    return RecordSet(records, provenance="synthetic", seed=seed)


def relabel_partition(record: BarcodeRecord, partition: str) -> BarcodeRecord:
    """Copy of `record` with a different partition tag."""
    return replace(record, partition=partition)
