"""Exact dense top-k retrieval over a pre-encoded corpus."""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import Corpus
from .errors import DataError, NumericalError, SpecMismatchError
from .io import iter_jsonl, read_container, write_container, write_jsonl

DEFAULT_K = 10

_INDEX_MAGIC = b"ENSAUGI1"


@dataclass
class VectorIndex:
    spec_id: str
    ids: np.ndarray
    matrix: np.ndarray
    _rows64: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.ids.shape[0]:
            raise DataError("index matrix rows must match ids")
        if self.ids.size > 1 and np.any(self.ids[1:] <= self.ids[:-1]):
            raise DataError("index ids must be strictly ascending")
        if not np.all(np.isfinite(self.matrix)):
            raise NumericalError(f"index {self.spec_id}: non-finite embedding")
        self._rows64 = self.matrix.astype(np.float64)

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def scores(self, q_vec: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        q = np.asarray(q_vec, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query dimension {q.shape} does not match index dimension {self.dim}")
        # Row-wise reduction: identical rows always produce identical scores.
        return (self._rows64[start:stop] * q).sum(axis=1)


def build_index(corpus: Corpus, enc, batch_size: int = 4096) -> VectorIndex:
    if corpus.size == 0:
        raise DataError("cannot index an empty corpus")
    ids = corpus.ids()
    texts = corpus.texts()
    blocks = []
    for start in range(0, len(ids), batch_size):
        try:
            blocks.append(enc.encode_passages(texts[start : start + batch_size], ids[start : start + batch_size]))
        except DataError as exc:
            raise DataError(f"building index for {enc.spec.spec_id}: {exc}") from exc
    matrix = np.vstack(blocks).astype(np.float32)
    bad = np.nonzero(~np.all(np.isfinite(matrix), axis=1))[0]
    if bad.size:
        raise NumericalError(f"non-finite embedding for sentence_id {ids[bad[0]]}")
    return VectorIndex(enc.spec.spec_id, np.array(ids, dtype=np.uint64), matrix)


def _select(scores: np.ndarray, offset: int, k: int) -> list[tuple[float, int]]:
    """Bounded-heap selection of (score, row) by score desc, row asc."""
    n = scores.shape[0]
    if n > 4 * k:
        # Exact prefilter: every row scoring at least the k-th largest value survives, ties included.
        kth = np.partition(scores, n - k)[n - k]
        rows = np.nonzero(scores >= kth)[0]
    else:
        rows = np.arange(n)
    vals = scores[rows].tolist()
    best = heapq.nlargest(k, zip(vals, (-(int(r) + offset) for r in rows)))
    return [(s, -neg) for s, neg in best]


def top_k(index: VectorIndex, q_vec: np.ndarray, k: int, partitions: int = 1, workers: int = 1) -> list[tuple[int, float]]:
    """The k highest-scoring (sentence_id, score), ties by ascending sentence_id.

    ``partitions`` splits the scan into row ranges whose heaps are merged;
    the result is identical for any partitioning.
    """
    if k <= 0:
        return []
    scores = index.scores(q_vec)
    M = index.size
    k_eff = min(k, M)
    if partitions <= 1 or M <= 1:
        best = _select(scores, 0, k_eff)
    else:
        bounds = np.linspace(0, M, min(partitions, M) + 1).astype(int)
        parts = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

        def scan(part):
            a, b = part
            return _select(scores[a:b], a, min(k_eff, b - a))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(scan, parts))
        else:
            chunks = [scan(p) for p in parts]
        best = heapq.nlargest(k_eff, ((s, -r) for chunk in chunks for s, r in chunk))
        best = [(s, -neg) for s, neg in best]
    return [(int(index.ids[r]), float(s)) for s, r in best]


def save_index(index: VectorIndex, path: str | Path) -> None:
    header = {"spec_id": index.spec_id, "M": index.size, "d": index.dim}
    write_container(path, _INDEX_MAGIC, header, [("ids", index.ids), ("matrix", index.matrix)])


def load_index(path: str | Path) -> VectorIndex:
    header, arrays = read_container(path, _INDEX_MAGIC)
    idx = VectorIndex(header["spec_id"], arrays["ids"], arrays["matrix"])
    if idx.size != header["M"] or idx.dim != header["d"]:
        raise DataError(f"{path}: header/payload shape mismatch")
    return idx


# --- retrieval sets ---

@dataclass(frozen=True)
class RetrievalEntry:
    query_id: str
    sentence_id: int
    score: float
    rank: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.query_id, self.sentence_id)


@dataclass(frozen=True)
class RetrievalSet:
    """R_L for one encoder; after oracle filtering, D_L (filtered=True)."""

    spec_id: str
    k: int
    entries: tuple[RetrievalEntry, ...]
    filtered: bool = False

    def __post_init__(self) -> None:
        seen = set()
        last: dict[str, tuple[int, float]] = {}
        for e in self.entries:
            if e.key in seen:
                raise DataError(f"duplicate retrieval {e.key} in {self.spec_id}")
            seen.add(e.key)
            if not 1 <= e.rank <= self.k:
                raise DataError(f"rank {e.rank} outside 1..{self.k} for {e.key}")
            prev = last.get(e.query_id)
            if prev is not None and (e.rank <= prev[0] or e.score > prev[1]):
                raise DataError(f"ranks/scores out of order for query {e.query_id} in {self.spec_id}")
            last[e.query_id] = (e.rank, e.score)

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self) -> set[tuple[str, int]]:
        return {e.key for e in self.entries}

    def query_ids(self) -> list[str]:
        return list(dict.fromkeys(e.query_id for e in self.entries))

    def truncate(self, k: int) -> "RetrievalSet":
        """Depth-k view; exact because top_k at depth k is a prefix of deeper results."""
        if k > self.k:
            raise ValueError(f"cannot truncate depth {self.k} retrievals to {k}")
        return RetrievalSet(self.spec_id, k, tuple(e for e in self.entries if e.rank <= k), self.filtered)

    def to_records(self) -> Iterable[dict]:
        for e in self.entries:
            yield {
                "query_id": e.query_id,
                "sentence_id": e.sentence_id,
                "score": e.score,
                "rank": e.rank,
                "spec_id": self.spec_id,
                "filtered": self.filtered,
                "k": self.k,
            }


def retrieve_all(index: VectorIndex, queries, enc, k: int = DEFAULT_K, partitions: int = 1) -> RetrievalSet:
    """Top-k retrieval for every query.

    ``queries`` is a QADataset (its query index is used) or a sequence of
    (query_id, query_text) pairs.
    """
    if index.spec_id != enc.spec.spec_id:
        raise SpecMismatchError(f"index built with {index.spec_id!r} but encoder is {enc.spec.spec_id!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if hasattr(queries, "query_index"):
        items = [(qid, text) for qid, (text, _) in queries.query_index.items()]
    else:
        items = list(queries)
    if not items:
        return RetrievalSet(index.spec_id, k, ())
    Q = enc.encode_queries([t for _, t in items], [q for q, _ in items])
    entries = []
    for (qid, _), q_vec in zip(items, Q):
        for rank, (sid, score) in enumerate(top_k(index, q_vec, k, partitions=partitions), start=1):
            entries.append(RetrievalEntry(qid, sid, score, rank))
    return RetrievalSet(index.spec_id, k, tuple(entries))


def write_retrievals(rs: RetrievalSet, path: str | Path) -> int:
    return write_jsonl(path, rs.to_records())


def read_retrievals(path: str | Path, spec_id: str | None = None) -> RetrievalSet:
    """Read a retrieval file; an empty file needs ``spec_id`` to be meaningful."""
    entries = []
    spec_ids, filtered, ks = set(), set(), set()
    for lineno, rec in iter_jsonl(path):
        try:
            entries.append(RetrievalEntry(str(rec["query_id"]), int(rec["sentence_id"]), float(rec["score"]), int(rec["rank"])))
            spec_ids.add(str(rec["spec_id"]))
            filtered.add(bool(rec.get("filtered", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: retrieval record needs query_id, sentence_id, score, rank, spec_id") from exc
        if "k" in rec:
            ks.add(int(rec["k"]))
    if len(spec_ids) > 1 or len(filtered) > 1:
        raise DataError(f"{path}: mixes spec_ids or filtered flags")
    if not entries:
        if spec_id is None:
            raise DataError(f"{path}: empty retrieval file")
        return RetrievalSet(spec_id, 1, (), True)
    k = max(ks) if ks else max(e.rank for e in entries)
    try:
        return RetrievalSet(spec_ids.pop(), k, tuple(entries), filtered.pop())
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
