"""Bi-encoder retrievers: hashed n-gram features, a linear query/passage tower
pair, the in-batch-negative softmax loss and its analytic gradient.

The reference encoder maps a text to ``W @ x`` where ``x`` is an
L2-normalised hashed bag of word unigrams, word bigrams and character
trigrams.  Query and passage towers are untied (two matrices).
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NumericalError
from .io import iter_jsonl, read_container, write_container

logger = logging.getLogger(__name__)

REFERENCE = "reference_trainable"
PRECOMPUTED = "precomputed"
FEATURE_KINDS = ("word1", "word2", "char3")

_ENCODER_MAGIC = b"ENSAUGE1"
_TOKEN = re.compile(r"\w+")


@dataclass(frozen=True)
class EncoderSpec:
    spec_id: str
    dim: int = 32
    feature_space: int = 4096
    seed: int = 0
    kind: str = REFERENCE
    features: tuple[str, ...] = FEATURE_KINDS

    def __post_init__(self) -> None:
        if not self.spec_id:
            raise ValueError("spec_id must be non-empty")
        if self.dim < 1:
            raise ValueError(f"spec {self.spec_id}: dim must be >= 1")
        if self.kind == REFERENCE and self.feature_space < self.dim:
            raise ValueError(f"spec {self.spec_id}: feature_space must be >= dim")
        if self.kind not in (REFERENCE, PRECOMPUTED):
            raise ValueError(f"spec {self.spec_id}: unknown kind {self.kind!r}")
        bad = [f for f in self.features if f not in FEATURE_KINDS]
        if bad or not self.features:
            raise ValueError(f"spec {self.spec_id}: feature kinds must be drawn from {FEATURE_KINDS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"spec {self.spec_id}: seed must fit in 64 bits")

    def header(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "kind": self.kind,
            "d": self.dim,
            "V": self.feature_space,
            "seed": self.seed,
            "features": list(self.features),
        }

    @classmethod
    def from_header(cls, h: dict) -> "EncoderSpec":
        return cls(h["spec_id"], int(h["d"]), int(h["V"]), int(h["seed"]), h["kind"], tuple(h.get("features", FEATURE_KINDS)))


# --- featurization ---

def feature_strings(text: str, kinds: Sequence[str] = FEATURE_KINDS) -> list[str]:
    words = _TOKEN.findall(text.lower())
    out: list[str] = []
    if "word1" in kinds:
        out.extend("w:" + w for w in words)
    if "word2" in kinds:
        out.extend(f"b:{a} {b}" for a, b in zip(words, words[1:]))
    if "char3" in kinds:
        for w in words:
            padded = f"<{w}>"
            out.extend("c:" + padded[i : i + 3] for i in range(len(padded) - 2))
    return out


def bucket(feature: str, seed: int, V: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little") % V


@dataclass(frozen=True)
class FeatureVector:
    indices: np.ndarray
    values: np.ndarray
    size: int

    def __post_init__(self) -> None:
        if self.indices.size and np.any(np.diff(self.indices) <= 0):
            raise ValueError("feature indices must be strictly increasing")

    def dense(self) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.values
        return out

    def __len__(self) -> int:
        return int(self.indices.size)


def feature_counts(text: str, spec: EncoderSpec) -> dict[int, int]:
    """Unnormalised bucket counts."""
    counts: dict[int, int] = {}
    for f in feature_strings(text, spec.features):
        b = bucket(f, spec.seed, spec.feature_space)
        counts[b] = counts.get(b, 0) + 1
    return counts


@lru_cache(maxsize=200_000)
def _featurize_cached(text: str, seed: int, V: int, kinds: tuple[str, ...]) -> tuple[tuple[int, ...], tuple[float, ...]]:
    counts: dict[int, int] = {}
    for f in feature_strings(text, kinds):
        b = bucket(f, seed, V)
        counts[b] = counts.get(b, 0) + 1
    if not counts:
        return (), ()
    idx = sorted(counts)
    norm = math.sqrt(sum(c * c for c in counts.values()))
    return tuple(idx), tuple(counts[i] / norm for i in idx)


def featurize(text: str, spec: EncoderSpec) -> FeatureVector:
    if spec.kind != REFERENCE:
        raise ValueError(f"spec {spec.spec_id}: featurize needs a {REFERENCE} spec")
    idx, vals = _featurize_cached(text, spec.seed, spec.feature_space, tuple(spec.features))
    return FeatureVector(np.array(idx, dtype=np.int64), np.array(vals, dtype=np.float64), spec.feature_space)


def featurize_batch(texts: Sequence[str], spec: EncoderSpec) -> sp.csr_matrix:
    """Row-stacked feature vectors as a CSR matrix of shape (n, V)."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for t in texts:
        idx, vals = _featurize_cached(t, spec.seed, spec.feature_space, tuple(spec.features))
        indices.extend(idx)
        data.extend(vals)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(texts), spec.feature_space),
    )


# --- encoders ---

class Encoder(Protocol):
    spec: EncoderSpec

    def encode_queries(self, texts: Sequence[str], ids: Sequence | None = None) -> np.ndarray: ...

    def encode_passages(self, texts: Sequence[str], ids: Sequence | None = None) -> np.ndarray: ...


@dataclass
class BiEncoder:
    """Trainable linear towers. Weights are held as float32 (the on-disk precision)."""

    spec: EncoderSpec
    W_q: np.ndarray
    W_p: np.ndarray
    train_log: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        shape = (self.spec.dim, self.spec.feature_space)
        if self.W_q.shape != shape or self.W_p.shape != shape:
            raise ValueError(f"weights must have shape {shape}")
        self.W_q = np.asarray(self.W_q, dtype=np.float32)
        self.W_p = np.asarray(self.W_p, dtype=np.float32)
        if not (np.all(np.isfinite(self.W_q)) and np.all(np.isfinite(self.W_p))):
            raise NumericalError(f"encoder {self.spec.spec_id}: non-finite weights")

    def _encode(self, W: np.ndarray, texts: Sequence[str]) -> np.ndarray:
        X = featurize_batch(texts, self.spec)
        return np.asarray(X @ W.astype(np.float64).T)

    def encode_queries(self, texts: Sequence[str], ids: Sequence | None = None) -> np.ndarray:
        return self._encode(self.W_q, texts)

    def encode_passages(self, texts: Sequence[str], ids: Sequence | None = None) -> np.ndarray:
        return self._encode(self.W_p, texts)


@dataclass
class PrecomputedEncoder:
    """Embedding tables keyed by query_id / sentence_id."""

    spec: EncoderSpec
    queries: dict[str, np.ndarray]
    passages: dict[int, np.ndarray]

    def _lookup(self, table: dict, ids: Sequence | None, role: str) -> np.ndarray:
        if ids is None:
            raise DataError(f"precomputed encoder {self.spec.spec_id}: {role} ids are required")
        out = np.zeros((len(ids), self.spec.dim))
        for i, key in enumerate(ids):
            vec = table.get(key)
            if vec is None:
                raise DataError(f"precomputed encoder {self.spec.spec_id}: no {role} embedding for id {key!r}")
            out[i] = vec
        return out

    def encode_queries(self, texts: Sequence[str], ids: Sequence | None = None) -> np.ndarray:
        return self._lookup(self.queries, ids, "query")

    def encode_passages(self, texts: Sequence[str], ids: Sequence | None = None) -> np.ndarray:
        return self._lookup(self.passages, None if ids is None else [int(i) for i in ids], "passage")


def encode_query(text: str, enc: Encoder, query_id: str | None = None) -> np.ndarray:
    return enc.encode_queries([text], None if query_id is None else [query_id])[0]


def encode_passage(text: str, enc: Encoder, sentence_id: int | None = None) -> np.ndarray:
    return enc.encode_passages([text], None if sentence_id is None else [sentence_id])[0]


def sim(q_vec: np.ndarray, p_vec: np.ndarray) -> float:
    q_vec = np.asarray(q_vec, dtype=np.float64)
    p_vec = np.asarray(p_vec, dtype=np.float64)
    if q_vec.shape != p_vec.shape or q_vec.ndim != 1:
        raise ValueError(f"sim: dimension mismatch {q_vec.shape} vs {p_vec.shape}")
    return float(np.dot(q_vec, p_vec))


# --- in-batch negative loss ---

def _softmax_rows(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row softmax and row log-sum-exp with max subtraction."""
    m = S.max(axis=1, keepdims=True)
    e = np.exp(S - m)
    z = e.sum(axis=1, keepdims=True)
    return e / z, (m + np.log(z)).ravel()


def _diagonal_nll(S: np.ndarray) -> np.ndarray:
    """Per-row -log softmax(S)_ii, accurate to relative precision near zero.

    Scores are shifted by their diagonal.  Where the diagonal is the row
    maximum the loss is log1p of the off-diagonal mass, so a nearly solved
    batch keeps its small loss instead of losing it to cancellation.
    """
    D = S - np.diag(S)[:, None]
    np.fill_diagonal(D, -np.inf)
    m = np.maximum(D.max(axis=1), 0.0)
    off = np.exp(D - m[:, None]).sum(axis=1)
    return np.where(m > 0, m + np.log(np.exp(-m) + off), np.log1p(off))


def same_query_mask(groups: Sequence) -> np.ndarray | None:
    """Off-diagonal entries whose rows share a query; None when every query is distinct.

    A second positive of the same query is not another query's passage, so
    it is left out of that row's softmax instead of acting as a negative.
    """
    g = np.asarray(groups)
    mask = g[:, None] == g[None, :]
    np.fill_diagonal(mask, False)
    return mask if mask.any() else None


def _masked_scores(S: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if not np.all(np.isfinite(S)):
        raise NumericalError("non-finite similarity in in-batch loss")
    if mask is None:
        return S
    S = S.copy()
    S[mask] = -np.inf
    return S


def loss_from_embeddings(Q: np.ndarray, P: np.ndarray, mask: np.ndarray | None = None) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        S = _masked_scores(Q @ P.T, mask)
    return float(np.mean(_diagonal_nll(S)))


def loss_and_grad(Xq, Xp, W_q: np.ndarray, W_p: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """In-batch loss and its gradient w.r.t. both towers, from feature matrices.

    With S = Q P^T and sigma the row softmax of S, dL/dS = (sigma - I) / B,
    so dL/dQ = G P, dL/dP = G^T Q and dL/dW = (dL/dE)^T X for each tower.
    Entries set in ``mask`` are excluded from the softmax (sigma = 0 there).
    """
    B = Xq.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        Q = np.asarray(Xq @ W_q.T)
        P = np.asarray(Xp @ W_p.T)
        S = _masked_scores(Q @ P.T, mask)
    sigma, _ = _softmax_rows(S)
    loss = float(np.mean(_diagonal_nll(S)))
    # sigma_ii - 1 equals minus the off-diagonal mass of row i; summing that
    # mass avoids cancellation when the diagonal dominates.
    G = sigma
    G[np.diag_indices(B)] = 0.0
    G[np.diag_indices(B)] = -G.sum(axis=1)
    G /= B
    dQ = G @ P
    dP = G.T @ Q
    gq = np.asarray((Xq.T @ dQ).T)
    gp = np.asarray((Xp.T @ dP).T)
    return loss, gq, gp


def _batch_features(batch: Sequence[tuple[str, str]], enc: BiEncoder):
    if len(batch) < 2:
        raise ValueError("in-batch loss needs at least 2 pairs")
    Xq = featurize_batch([q for q, _ in batch], enc.spec)
    Xp = featurize_batch([p for _, p in batch], enc.spec)
    return Xq, Xp


def in_batch_loss(batch: Sequence[tuple[str, str]], enc: BiEncoder, mask_same_query: bool = False) -> float:
    """Mean over rows of -log softmax(S)_ii with S_ij = sim(q_i, p_j).

    With ``mask_same_query`` a row's softmax skips other entries that repeat its query text.
    """
    Xq, Xp = _batch_features(batch, enc)
    Q = np.asarray(Xq @ enc.W_q.astype(np.float64).T)
    P = np.asarray(Xp @ enc.W_p.astype(np.float64).T)
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(P))):
        raise NumericalError("non-finite embedding in batch")
    return loss_from_embeddings(Q, P, same_query_mask([q for q, _ in batch]) if mask_same_query else None)


def in_batch_loss_gradient(batch: Sequence[tuple[str, str]], enc: BiEncoder, mask_same_query: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`in_batch_loss` with respect to W_q and W_p (float64)."""
    Xq, Xp = _batch_features(batch, enc)
    mask = same_query_mask([q for q, _ in batch]) if mask_same_query else None
    _, gq, gp = loss_and_grad(Xq, Xp, enc.W_q.astype(np.float64), enc.W_p.astype(np.float64), mask)
    return gq, gp


# --- training ---

@dataclass(frozen=True)
class RetrieverHyper:
    batch_size: int = 16
    learning_rate: float = 2.0
    epochs: int = 30
    seed: int = 0
    mask_same_query: bool = True


def init_encoder(spec: EncoderSpec, seed: int) -> BiEncoder:
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(spec.feature_space)
    shape = (spec.dim, spec.feature_space)
    W_q = rng.uniform(-bound, bound, shape)
    W_p = rng.uniform(-bound, bound, shape)
    return BiEncoder(spec, W_q, W_p)


def positive_pairs(dataset) -> list[tuple[str, str]]:
    """(query_text, sentence_text) for every z=1 pair; negatives are unused."""
    return [(p.query_text, p.sentence_text) for p in dataset.pairs if p.label == 1]


def train_retriever(data, spec: EncoderSpec, hyper: RetrieverHyper = RetrieverHyper()) -> BiEncoder:
    """Mini-batch gradient descent on the in-batch loss over shuffled positive pairs.

    ``data`` is a QADataset (only z=1 pairs are used) or a list of
    (query_text, positive_text) tuples.
    """
    if spec.kind != REFERENCE:
        raise ValueError(f"spec {spec.spec_id}: only {REFERENCE} encoders can be trained")
    pairs = positive_pairs(data) if hasattr(data, "pairs") else list(data)
    B = hyper.batch_size
    if B < 2:
        raise ValueError("batch_size must be >= 2")
    if len(pairs) < B:
        raise ValueError(f"{len(pairs)} positive pairs but batch_size={B}; use a smaller batch size")
    enc = init_encoder(spec, hyper.seed)
    if hyper.epochs == 0:
        return enc
    rng = np.random.default_rng([hyper.seed, 1])
    Xq_all = featurize_batch([q for q, _ in pairs], spec)
    Xp_all = featurize_batch([p for _, p in pairs], spec)
    _, groups = np.unique([q for q, _ in pairs], return_inverse=True)
    W_q = enc.W_q.astype(np.float64)
    W_p = enc.W_p.astype(np.float64)
    log: list[float] = []
    n = len(pairs)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        batches = [order[i : i + B] for i in range(0, n, B)]
        if len(batches) > 1 and len(batches[-1]) < 2:
            batches.pop()
        losses = []
        for idx in batches:
            mask = same_query_mask(groups[idx]) if hyper.mask_same_query else None
            loss, gq, gp = loss_and_grad(Xq_all[idx], Xp_all[idx], W_q, W_p, mask)
            if not math.isfinite(loss):
                raise NumericalError(f"encoder {spec.spec_id}: non-finite loss at epoch {epoch}")
            W_q -= hyper.learning_rate * gq
            W_p -= hyper.learning_rate * gp
            losses.append(loss)
        log.append(float(np.mean(losses)))
        logger.debug("retriever %s epoch %d loss %.5f", spec.spec_id, epoch, log[-1])
    if not (np.all(np.isfinite(W_q)) and np.all(np.isfinite(W_p))):
        raise NumericalError(f"encoder {spec.spec_id}: weights diverged")
    return BiEncoder(spec, W_q, W_p, log)


# --- files ---

def save_encoder(enc: BiEncoder | PrecomputedEncoder, path: str | Path) -> None:
    header = enc.spec.header()
    if isinstance(enc, BiEncoder):
        header["train_log"] = list(enc.train_log)
        write_container(path, _ENCODER_MAGIC, header, [("W_q", enc.W_q), ("W_p", enc.W_p)])
        return
    qids = list(enc.queries)
    pids = sorted(enc.passages)
    header["query_ids"] = qids
    header["passage_ids"] = pids
    qmat = np.array([enc.queries[q] for q in qids], dtype=np.float32).reshape(len(qids), enc.spec.dim)
    pmat = np.array([enc.passages[p] for p in pids], dtype=np.float32).reshape(len(pids), enc.spec.dim)
    write_container(path, _ENCODER_MAGIC, header, [("queries", qmat), ("passages", pmat)])


def load_encoder(path: str | Path) -> BiEncoder | PrecomputedEncoder:
    header, arrays = read_container(path, _ENCODER_MAGIC)
    spec = EncoderSpec.from_header(header)
    if spec.kind == REFERENCE:
        return BiEncoder(spec, arrays["W_q"], arrays["W_p"], list(header.get("train_log", [])))
    queries = {q: arrays["queries"][i] for i, q in enumerate(header["query_ids"])}
    passages = {int(p): arrays["passages"][i] for i, p in enumerate(header["passage_ids"])}
    return PrecomputedEncoder(spec, queries, passages)


def load_precomputed(path: str | Path, spec_id: str) -> PrecomputedEncoder:
    """Read line-delimited {id, vector[, role]} records.

    Without an explicit role, integer ids are passages (sentence ids) and
    string ids are queries.
    """
    queries: dict[str, np.ndarray] = {}
    passages: dict[int, np.ndarray] = {}
    dim = None
    for lineno, rec in iter_jsonl(path):
        if "id" not in rec or "vector" not in rec:
            raise DataError(f"{path}:{lineno}: embedding record needs id and vector")
        vec = np.asarray(rec["vector"], dtype=np.float32)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise DataError(f"{path}:{lineno}: vector must be a finite list of numbers")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DataError(f"{path}:{lineno}: dimension {vec.size} != {dim}")
        role = rec.get("role") or ("passage" if isinstance(rec["id"], int) else "query")
        if role == "passage":
            passages[int(rec["id"])] = vec
        elif role == "query":
            queries[str(rec["id"])] = vec
        else:
            raise DataError(f"{path}:{lineno}: unknown role {role!r}")
    if dim is None:
        raise DataError(f"{path}: no embeddings")
    spec = EncoderSpec(spec_id, dim=dim, feature_space=dim, kind=PRECOMPUTED)
    return PrecomputedEncoder(spec, queries, passages)
