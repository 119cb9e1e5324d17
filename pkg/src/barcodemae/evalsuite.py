"""Downstream evaluations on frozen embeddings.

Pieces: cosine 1-NN label probing, deterministic PCA reduction, Ward-linkage
agglomerative clustering on L2-normalized rows, adjusted mutual information
(natural logs, arithmetic-mean normalizer, hypergeometric expected MI), the
harmonic-mean summary score, and the masking/deletion robustness sweep.

Everything here is deterministic: 1-NN ties go to the lowest reference
index, PCA signs follow a largest-loading convention, and Ward merge ties go
to the lexicographically smallest cluster-id pair.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DataError
from .ioutil import atomic_write, fmt_float
from .masking import MaskPlan, sample_mask
from .model import EmbeddingMatrix, ModelParams, embed_corpus, embed_sequence
from .tokenizer import TokenSequence, tokenize

DEFAULT_SWEEP_RATIOS = tuple(round(0.1 * i, 1) for i in range(10))

ROBUSTNESS_MODES = ("mask_substitute", "delete")


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    n_queries: int
    per_label: dict

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


@dataclass(frozen=True)
class ClusterResult:
    ami: float
    n_clusters: int
    assignment: np.ndarray
    record_ids: tuple


@dataclass(frozen=True)
class RobustnessCurve:
    mode: str
    points: tuple

    def __post_init__(self):
        ratios = [r for r, _ in self.points]
        if any(not 0.0 <= r < 1.0 for r in ratios):
            raise ValueError("corruption ratios must lie in [0, 1)")
        if any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("corruption ratios must be strictly increasing")


def _unit_rows(emb: EmbeddingMatrix, role: str) -> np.ndarray:
    x = emb.vectors.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    bad = np.nonzero(norms == 0)[0]
    if len(bad):
        raise ValueError(
            f"zero-norm embedding in {role} set for record {emb.record_ids[bad[0]]}"
        )
    return x / norms[:, None]


def _require_labels(emb: EmbeddingMatrix, level: str, role: str) -> list:
    labels = emb.labels(level)
    for rid, lab in zip(emb.record_ids, labels):
        if lab is None:
            raise ValueError(f"{role} record {rid} has no {level} label")
    return list(labels)


def knn_probe(
    reference: EmbeddingMatrix, query: EmbeddingMatrix, label_level: str = "genus"
) -> ProbeResult:
    """1-nearest-neighbour label transfer under cosine similarity.

    Ties on similarity resolve to the lowest reference index.
    """
    if len(reference) == 0 or len(query) == 0:
        raise ValueError("knn_probe needs non-empty reference and query sets")
    ref_labels = _require_labels(reference, label_level, "reference")
    true_labels = _require_labels(query, label_level, "query")
    sims = _unit_rows(query, "query") @ _unit_rows(reference, "reference").T
    nearest = sims.argmax(axis=1)
    correct_by: dict = {}
    total_by: dict = {}
    n_correct = 0
    for qi, ri in enumerate(nearest):
        truth = true_labels[qi]
        hit = ref_labels[ri] == truth
        n_correct += hit
        total_by[truth] = total_by.get(truth, 0) + 1
        correct_by[truth] = correct_by.get(truth, 0) + hit
    per_label = {lab: correct_by[lab] / total_by[lab] for lab in sorted(total_by)}
    return ProbeResult(
        accuracy=n_correct / len(query), n_queries=len(query), per_label=per_label
    )


def reduce_dims(emb, target_dim: int = 50) -> np.ndarray:
    """Mean-centered projection onto the top principal components.

    Deterministic sign convention: each component's largest-magnitude loading
    is made positive.
    """
    x = emb.vectors if isinstance(emb, EmbeddingMatrix) else np.asarray(emb)
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 rows to reduce")
    if not 1 <= target_dim <= min(n, d):
        raise ValueError(
            f"target_dim {target_dim} outside [1, min(n={n}, d={d})]"
        )
    xc = x.astype(np.float64) - x.astype(np.float64).mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    components = vt[:target_dim].copy()
    flip = components[np.arange(target_dim), np.abs(components).argmax(axis=1)] < 0
    components[flip] *= -1.0
    return xc @ components.T


def agglomerative_cluster(x, n_clusters: int) -> np.ndarray:
    """Ward-linkage agglomeration of L2-normalized rows, cut at n_clusters.

    The merge cost is the Ward variance increase |A||B|/(|A|+|B|) * ||mu_A -
    mu_B||^2, maintained by the Lance-Williams recurrence.  Cost ties resolve
    to the lexicographically smallest pair of cluster ids, where original
    rows are ids 0..n-1 and the t-th merge creates id n+t.  Output labels are
    0..n_clusters-1 in order of each cluster's smallest member row.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n_clusters > n:
        raise ValueError(f"n_clusters {n_clusters} exceeds row count {n}")
    norms = np.linalg.norm(x, axis=1)
    x = np.where(norms[:, None] > 0, x / np.where(norms == 0, 1.0, norms)[:, None], x)

    total = 2 * n - 1
    cost = np.full((total, total), np.inf)
    # direct-difference distances keep duplicate rows at exactly zero, so
    # the documented tie-break rule actually sees the tie
    d2 = np.empty((n, n))
    for i in range(n):
        d2[i] = ((x - x[i]) ** 2).sum(axis=1)
    cost[:n, :n] = 0.5 * d2
    np.fill_diagonal(cost, np.inf)
    active = np.zeros(total, dtype=bool)
    active[:n] = True
    size = np.zeros(total, dtype=np.int64)
    size[:n] = 1
    members: list = [[i] for i in range(n)] + [None] * (n - 1)

    for t in range(n - n_clusters):
        act = np.nonzero(active)[0]
        sub = cost[np.ix_(act, act)]
        best = sub.min()
        pairs = np.nonzero(sub == best)
        a_local, b_local = min(
            (pa, pb) for pa, pb in zip(*pairs) if pa < pb
        )
        a, b = int(act[a_local]), int(act[b_local])
        new = n + t
        sa, sb = size[a], size[b]
        for c in act:
            if c == a or c == b:
                continue
            sc = size[c]
            merged = (
                (sa + sc) * cost[a, c] + (sb + sc) * cost[b, c] - sc * cost[a, b]
            ) / (sa + sb + sc)
            cost[new, c] = merged
            cost[c, new] = merged
        active[a] = active[b] = False
        active[new] = True
        size[new] = sa + sb
        members[new] = members[a] + members[b]

    clusters = sorted((min(members[c]), c) for c in np.nonzero(active)[0])
    assignment = np.empty(n, dtype=np.int64)
    for label, (_, c) in enumerate(clusters):
        assignment[members[c]] = label
    return assignment


def _entropy(counts: np.ndarray, n: int) -> float:
    frac = counts / n
    return float(-(frac * np.log(frac)).sum())


def _expected_mi(a_counts, b_counts, n: int) -> float:
    """E[MI] over random contingency tables with fixed margins (hypergeometric)."""
    lg = gammaln(np.arange(n + 2, dtype=np.float64))  # lg[x] = log((x-1)!)
    log_n_fact = lg[n + 1]
    emi = 0.0
    for ai in a_counts:
        for bj in b_counts:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            base = (
                lg[ai + 1] + lg[bj + 1] + lg[n - ai + 1] + lg[n - bj + 1] - log_n_fact
            )
            for nij in range(lo, hi + 1):
                log_p = base - (
                    lg[nij + 1]
                    + lg[ai - nij + 1]
                    + lg[bj - nij + 1]
                    + lg[n - ai - bj + nij + 1]
                )
                emi += (nij / n) * math.log(n * nij / (ai * bj)) * math.exp(log_p)
    return emi


def _contingency(labels_a, labels_b):
    a_index = {lab: i for i, lab in enumerate(dict.fromkeys(labels_a))}
    b_index = {lab: i for i, lab in enumerate(dict.fromkeys(labels_b))}
    table = np.zeros((len(a_index), len(b_index)), dtype=np.int64)
    for la, lb in zip(labels_a, labels_b):
        table[a_index[la], b_index[lb]] += 1
    return table


def ami(labels_a, labels_b) -> float:
    """Adjusted mutual information with the arithmetic-mean normalizer.

    Natural logarithms throughout; expected MI under the permutation model.
    A constant labeling on either side gives 0.0 by convention.
    """
    labels_a = list(labels_a)
    labels_b = list(labels_b)
    if len(labels_a) != len(labels_b):
        raise ValueError(
            f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    n = len(labels_a)
    if n == 0:
        raise ValueError("cannot score empty labelings")
    table = _contingency(labels_a, labels_b)
    a_counts = table.sum(axis=1)
    b_counts = table.sum(axis=0)
    if len(a_counts) == 1 or len(b_counts) == 1:
        return 0.0
    log_a = np.log(a_counts / n)
    log_b = np.log(b_counts / n)
    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij:
                mi += (nij / n) * (math.log(nij / n) - log_a[i] - log_b[j])
    h_a = _entropy(a_counts, n)
    h_b = _entropy(b_counts, n)
    emi = _expected_mi(a_counts, b_counts, n)
    denom = 0.5 * (h_a + h_b) - emi
    if denom == 0.0:
        return 0.0
    return (mi - emi) / denom


def harmonic_mean(a: float, b: float) -> float:
    """2ab/(a+b), with 0 when either input is 0."""
    if a < 0 or b < 0:
        raise ValueError("harmonic_mean requires non-negative inputs")
    if a == 0 or b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def _params_of(model) -> ModelParams:
    if isinstance(model, ModelParams):
        return model
    if hasattr(model, "params"):
        return model.params
    raise TypeError("expected ModelParams or a Checkpoint carrying .params")


def bin_reconstruction_eval(
    model, records, target_dim: int = 50, reducer=None
) -> ClusterResult:
    """Zero-shot cluster recovery: embed, reduce, cluster, score against bins.

    The cluster count equals the number of distinct true bin labels.  Records
    are processed in record_id order so the result depends on the input only
    as a set.  `reducer(vectors, target_dim) -> array` replaces the default
    principal-component reduction when given.
    """
    params = _params_of(model)
    records = sorted(records, key=lambda r: r.record_id)
    if not records:
        raise DataError("no records to evaluate")
    for rec in records:
        if rec.bin_id is None:
            raise DataError(f"record {rec.record_id} has no bin label")
    emb = embed_corpus(params, records)
    bins = [r.bin_id for r in records]
    n_clusters = len(set(bins))
    dim = min(target_dim, emb.vectors.shape[1], len(records))
    reduced = (reducer or reduce_dims)(emb.vectors, dim)
    assignment = agglomerative_cluster(reduced, n_clusters)
    return ClusterResult(
        ami=ami(assignment.tolist(), bins),
        n_clusters=n_clusters,
        assignment=assignment,
        record_ids=emb.record_ids,
    )


def _corrupt_tokens(ts: TokenSequence, plan: MaskPlan, mask_id: int, mode: str) -> TokenSequence:
    if mode == "mask_substitute":
        ids = ts.ids.copy()
        ids[plan.masked_positions] = mask_id
        return TokenSequence(ids=ids, positions=ts.positions.copy(), offset=ts.offset)
    kept = np.setdiff1d(np.arange(len(ts), dtype=np.int64), plan.masked_positions)
    return TokenSequence(
        ids=ts.ids[kept], positions=ts.positions[kept], offset=ts.offset
    )


def robustness_sweep(
    model,
    reference,
    query_records,
    ratios=DEFAULT_SWEEP_RATIOS,
    mode: str = "mask_substitute",
    label_level: str = "genus",
    seed: int = 0,
) -> RobustnessCurve:
    """Genus-probe accuracy as query corruption grows, reference kept clean.

    mask_substitute replaces sampled tokens with the MASK id in place; delete
    drops them and lets the surviving tokens keep their original position
    indices.  At least one token always survives.  `reference` is a record
    collection (embedded clean here) or a precomputed EmbeddingMatrix.
    """
    if mode not in ROBUSTNESS_MODES:
        raise ValueError(f"mode must be one of {ROBUSTNESS_MODES}")
    params = _params_of(model)
    if mode == "mask_substitute" and params.cfg.variant == "barcode_mae":
        warnings.warn(
            "substituting MASK tokens into a barcode_mae encoder: this encoder "
            "never saw MASK during training",
            stacklevel=2,
        )
    vocab = params.cfg.vocab()
    tok_cfg = params.cfg.tokenizer_config()
    if not isinstance(reference, EmbeddingMatrix):
        reference = embed_corpus(params, reference)
    query_records = list(query_records)
    token_seqs = []
    for rec in query_records:
        try:
            token_seqs.append(tokenize(rec.sequence, tok_cfg))
        except ValueError as err:
            raise DataError(f"record {rec.record_id}: {err}") from err
    labels = {
        "record_ids": tuple(r.record_id for r in query_records),
        "genus": tuple(r.genus for r in query_records),
        "species": tuple(r.species for r in query_records),
        "bin_id": tuple(r.bin_id for r in query_records),
    }
    rng = np.random.default_rng(seed)
    points = []
    for ratio in ratios:
        vectors = []
        for ts in token_seqs:
            plan = sample_mask(len(ts), ratio, rng, "mae")
            if len(plan) == len(ts):
                # always keep at least one token
                plan = MaskPlan(plan.masked_positions[1:], plan.mode)
            corrupted = _corrupt_tokens(ts, plan, vocab.mask_id, mode)
            vectors.append(embed_sequence(params, corrupted))
        query_emb = EmbeddingMatrix(vectors=np.stack(vectors), **labels)
        probe = knn_probe(reference, query_emb, label_level)
        points.append((float(ratio), probe.accuracy))
    return RobustnessCurve(mode=mode, points=tuple(points))


def save_embeddings(emb: EmbeddingMatrix, path) -> None:
    """TSV with one row per record: ids, labels, then v0..v{d-1}."""
    d = emb.vectors.shape[1]
    header = ["record_id", "genus", "species", "bin_id"] + [f"v{i}" for i in range(d)]
    with atomic_write(path) as handle:
        handle.write("\t".join(header) + "\n")
        for i in range(len(emb)):
            cells = [
                emb.record_ids[i],
                emb.genus[i] or "",
                emb.species[i] or "",
                emb.bin_id[i] or "",
            ] + [fmt_float(v) for v in emb.vectors[i]]
            handle.write("\t".join(cells) + "\n")


def load_embeddings(path, dtype=np.float32) -> EmbeddingMatrix:
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n").split("\t")
        if header[:4] != ["record_id", "genus", "species", "bin_id"]:
            raise DataError(f"{path}: not an embedding TSV (bad header)")
        d = len(header) - 4
        record_ids = []
        genus = []
        species = []
        bin_id = []
        rows = []
        for lineno, line in enumerate(handle, start=2):
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(header):
                raise DataError(f"{path}: line {lineno}: wrong field count")
            record_ids.append(cells[0])
            genus.append(cells[1] or None)
            species.append(cells[2] or None)
            bin_id.append(cells[3] or None)
            rows.append([float(c) for c in cells[4:]])
    vectors = np.asarray(rows, dtype=dtype).reshape(len(rows), d)
    return EmbeddingMatrix(
        vectors=vectors,
        record_ids=tuple(record_ids),
        genus=tuple(genus),
        species=tuple(species),
        bin_id=tuple(bin_id),
    )
