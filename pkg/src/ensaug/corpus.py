"""Document ingestion, sentence ids, and the labeled QA record formats."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .io import iter_jsonl, read_jsonl, sha256_file, write_json, write_jsonl

logger = logging.getLogger(__name__)

# Query-type vocabulary of the privacy-QA breakdown tables (OPP-115 style).
DEFAULT_CATEGORIES = (
    "Data Collection",
    "Data Sharing",
    "Data Security",
    "Data Retention",
    "User Access",
    "User Choice",
    "Others",
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_WS = re.compile(r"\s+")
_SENT_BREAK = re.compile(r"(?<=[.!?])\s+|(?<=[.!?][\"'\)\]])\s+")


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def normalize_text(text: str) -> str:
    """NFC, collapse whitespace runs to one space, strip. Case is preserved."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def sentence_id(text: str) -> int:
    return fnv1a_64(normalize_text(text).encode("utf-8"))


@dataclass(frozen=True)
class PolicySentence:
    sentence_id: int
    doc_id: str
    position: int
    text: str

    def to_record(self) -> dict:
        return {"sentence_id": self.sentence_id, "doc_id": self.doc_id, "position": self.position, "text": self.text}


def segment_document(raw_text: str, doc_id: str) -> list[PolicySentence]:
    """Split on terminal punctuation followed by whitespace, then on newlines."""
    if not doc_id:
        raise DataError("segment_document: empty doc_id")
    pieces: list[str] = []
    for chunk in _SENT_BREAK.split(raw_text):
        pieces.extend(chunk.splitlines())
    out: list[PolicySentence] = []
    for piece in pieces:
        text = normalize_text(piece)
        if text:
            out.append(PolicySentence(sentence_id(text), doc_id, len(out), text))
    return out


@dataclass(frozen=True)
class Corpus:
    """Deduplicated sentence pool, ordered by ascending sentence_id."""

    sentences: tuple[PolicySentence, ...]
    source_manifest: tuple[dict, ...] = ()
    collisions: tuple[dict, ...] = ()
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_id = {}
        prev = -1
        for s in self.sentences:
            if s.sentence_id <= prev:
                raise DataError(f"corpus not strictly ascending by sentence_id at {s.sentence_id}")
            prev = s.sentence_id
            by_id[s.sentence_id] = s
        self._by_id.update(by_id)

    @property
    def size(self) -> int:
        return len(self.sentences)

    def __len__(self) -> int:
        return len(self.sentences)

    def __contains__(self, sid: int) -> bool:
        return sid in self._by_id

    def get(self, sid: int) -> PolicySentence | None:
        return self._by_id.get(sid)

    def text(self, sid: int) -> str:
        s = self._by_id.get(sid)
        if s is None:
            raise DataError(f"sentence_id {sid} not in corpus")
        return s.text

    def ids(self) -> list[int]:
        return [s.sentence_id for s in self.sentences]

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]

    def doc_lengths(self) -> dict[str, int]:
        """Sentences per document after dedup (max position + 1 among kept sentences)."""
        lengths: dict[str, int] = {}
        for s in self.sentences:
            lengths[s.doc_id] = max(lengths.get(s.doc_id, 0), s.position + 1)
        return lengths


def _read_documents(path: Path) -> list[PolicySentence]:
    out: list[PolicySentence] = []
    for lineno, rec in iter_jsonl(path):
        doc_id, text = rec.get("doc_id"), rec.get("text")
        if not isinstance(doc_id, str) or not doc_id or not isinstance(text, str):
            raise DataError(f"{path}:{lineno}: document record needs string fields doc_id and text")
        out.extend(segment_document(text, doc_id))
    return out


def build_corpus(sentences: Iterable[PolicySentence], source_manifest: Sequence[dict] = ()) -> Corpus:
    """Collapse exact duplicates to their first occurrence and order by id.

    Distinct texts that hash to the same id are kept; the later one is
    re-keyed by hashing its text with the position appended.
    """
    kept: dict[int, PolicySentence] = {}
    seen_text: dict[str, int] = {}
    collisions = []
    for s in sentences:
        if s.text in seen_text:
            continue
        sid = s.sentence_id
        if sid in kept:
            suffix = 0
            new_id = sid
            while new_id in kept:
                key = f"{s.text}#{s.position}" + (f"#{suffix}" if suffix else "")
                new_id = fnv1a_64(key.encode("utf-8"))
                suffix += 1
            logger.warning("sentence_id collision %d: %r vs %r; re-keyed to %d", sid, kept[sid].text, s.text, new_id)
            collisions.append({"sentence_id": sid, "reassigned": new_id, "doc_id": s.doc_id, "position": s.position})
            s = PolicySentence(new_id, s.doc_id, s.position, s.text)
        kept[s.sentence_id] = s
        seen_text[s.text] = s.sentence_id
    ordered = tuple(kept[k] for k in sorted(kept))
    return Corpus(ordered, tuple(source_manifest), tuple(collisions))


def ingest_corpus(paths: Sequence[str | Path], workers: int = 1) -> Corpus:
    paths = [Path(p) for p in paths]
    for p in paths:
        if not p.is_file():
            raise DataError(f"{p}: cannot read (no such file)")
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_file = list(pool.map(_read_documents, paths))
    else:
        per_file = [_read_documents(p) for p in paths]
    manifest = [{"path": str(p), "sha256": sha256_file(p)} for p in paths]
    return build_corpus((s for chunk in per_file for s in chunk), manifest)


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    write_jsonl(path, (s.to_record() for s in corpus.sentences))
    write_json(manifest_path(path), {"sources": list(corpus.source_manifest), "collisions": list(corpus.collisions), "size": corpus.size})


def read_corpus(path: str | Path) -> Corpus:
    sentences = []
    for lineno, rec in iter_jsonl(path):
        try:
            sentences.append(PolicySentence(int(rec["sentence_id"]), str(rec["doc_id"]), int(rec["position"]), str(rec["text"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: corpus record needs sentence_id, doc_id, position, text") from exc
    mpath = manifest_path(path)
    sources: tuple = ()
    if mpath.exists():
        sources = tuple(json.loads(mpath.read_text(encoding="utf-8")).get("sources", ()))
    try:
        return Corpus(tuple(sentences), sources)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


# --- labeled QA data ---

GOLD = "gold"


@dataclass(frozen=True)
class QAPair:
    query_id: str
    query_text: str
    sentence_id: int
    sentence_text: str
    label: int
    category: str | None = None
    provenance: str = GOLD

    @property
    def key(self) -> tuple[str, int]:
        return (self.query_id, self.sentence_id)

    @property
    def is_augmented(self) -> bool:
        return self.provenance.startswith("augmented")

    @property
    def augmented_by(self) -> tuple[str, ...]:
        if not self.is_augmented:
            return ()
        _, _, specs = self.provenance.partition(":")
        return tuple(s for s in specs.split(",") if s)

    def to_record(self) -> dict:
        rec = {
            "query_id": self.query_id,
            "query_text": self.query_text,
            "sentence_id": self.sentence_id,
            "sentence_text": self.sentence_text,
            "label": self.label,
        }
        if self.category is not None:
            rec["category"] = self.category
        rec["provenance"] = self.provenance
        return rec


def augmented_provenance(spec_ids: Iterable[str]) -> str:
    return "augmented:" + ",".join(spec_ids)


@dataclass(frozen=True)
class QADataset:
    pairs: tuple[QAPair, ...]
    categories: tuple[str, ...] = DEFAULT_CATEGORIES

    def __post_init__(self) -> None:
        seen: Counter = Counter(p.key for p in self.pairs)
        dups = sorted(k for k, c in seen.items() if c > 1)
        if dups:
            shown = ", ".join(f"({q}, {s})" for q, s in dups[:10])
            raise DataError(f"duplicate (query_id, sentence_id) pairs: {shown}" + (" ..." if len(dups) > 10 else ""))
        vocab = set(self.categories)
        queries: dict[str, tuple[str, str | None]] = {}
        for p in self.pairs:
            if p.label not in (0, 1):
                raise DataError(f"label must be 0 or 1, got {p.label!r} for ({p.query_id}, {p.sentence_id})")
            if p.is_augmented and p.label != 1:
                raise DataError(f"augmented pair ({p.query_id}, {p.sentence_id}) must have label 1")
            if p.category is not None and p.category not in vocab:
                raise DataError(f"category {p.category!r} of query {p.query_id} not in declared vocabulary")
            prev = queries.get(p.query_id)
            if prev is None:
                queries[p.query_id] = (p.query_text, p.category)
            elif prev[0] != p.query_text:
                raise DataError(f"query {p.query_id} has inconsistent texts")
        object.__setattr__(self, "_queries", queries)

    @property
    def m(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def query_index(self) -> Mapping[str, tuple[str, str | None]]:
        """query_id -> (query_text, category) in first-seen order."""
        return self._queries  # type: ignore[attr-defined]

    def query_ids(self) -> list[str]:
        return list(self.query_index)

    def keys(self) -> set[tuple[str, int]]:
        return {p.key for p in self.pairs}

    def positives(self) -> list[QAPair]:
        return [p for p in self.pairs if p.label == 1]

    def category_of(self) -> dict[str, str]:
        return {q: (cat or "Others") for q, (_, cat) in self.query_index.items()}

    def stats(self) -> dict:
        pos = sum(p.label for p in self.pairs)
        nq = len(self.query_index)
        per_query = Counter(p.query_id for p in self.pairs)
        return {
            "pairs": self.m,
            "queries": nq,
            "positives": pos,
            "negatives": self.m - pos,
            "positive_rate": pos / self.m if self.m else 0.0,
            "positives_per_query": pos / nq if nq else 0.0,
            "sentences_per_query": (sum(per_query.values()) / nq) if nq else 0.0,
            "augmented": sum(1 for p in self.pairs if p.is_augmented),
        }


def load_qa_dataset(path: str | Path, corpus: Corpus | None = None, categories: Sequence[str] = DEFAULT_CATEGORIES) -> QADataset:
    pairs = []
    for lineno, rec in iter_jsonl(path):
        try:
            qid = str(rec["query_id"])
            qtext = normalize_text(str(rec["query_text"]))
            label = rec["label"]
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        if isinstance(label, bool) or label not in (0, 1):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
        stext = rec.get("sentence_text")
        sid = rec.get("sentence_id")
        if sid is not None:
            try:
                sid = int(sid)
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: sentence_id must be an integer") from exc
            if stext is None:
                if corpus is None or sid not in corpus:
                    raise DataError(f"{path}:{lineno}: sentence_id {sid} does not resolve and no sentence_text given")
                stext = corpus.text(sid)
            else:
                stext = normalize_text(str(stext))
        elif stext is not None:
            stext = normalize_text(str(stext))
            if not stext:
                raise DataError(f"{path}:{lineno}: empty sentence_text")
            sid = sentence_id(stext)
        else:
            raise DataError(f"{path}:{lineno}: need sentence_id or sentence_text")
        category = rec.get("category")
        pairs.append(QAPair(qid, qtext, sid, stext, int(label), category, str(rec.get("provenance", GOLD))))
    try:
        return QADataset(tuple(pairs), tuple(categories))
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_qa_dataset(dataset: QADataset | Iterable[QAPair], path: str | Path) -> int:
    pairs = dataset.pairs if isinstance(dataset, QADataset) else dataset
    return write_jsonl(path, (p.to_record() for p in pairs))


def read_categories(path: str | Path) -> dict[str, str]:
    """query_id -> category from a line-delimited {query_id, category} file."""
    out = {}
    for rec in read_jsonl(path):
        if "query_id" not in rec or "category" not in rec:
            raise DataError(f"{path}: category records need query_id and category")
        out[str(rec["query_id"])] = str(rec["category"])
    return out
