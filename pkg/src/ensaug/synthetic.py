"""Planted-topic benchmark for desk-scale runs of the augmentation pipeline.

Every sentence has a latent topic (or none).  A query is relevant to a
sentence iff their topics match.  Each topic owns a vocabulary: a few
"head" words that queries use, and a family of tail words built from a
shared stem plus a short ending.  Relevant sentences mix one or two head
words with tail words.  Sibling topics (0,1), (2,3), ... share some head
words and their stem, so they are easy to confuse.

The unlabeled corpus also holds decoys: a single head word among
background words, tagged with words from a small marker pool.  The gold
documents contain the same kinds of hard negatives, so a classifier fit on
them can learn to reject decoys even though retrieval by head words
cannot.

The gold split labels three sentences per query, which leaves most of
every topic's tail family unseen.  Encoders with character n-gram
features can still recognize unseen family members through the stem;
word-only encoders cannot, which is what lets retrieved positives carry
new information to a word-level final model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import DEFAULT_CATEGORIES, normalize_text, sentence_id
from .io import write_jsonl

_FUNCTION_WORDS = (
    "we", "you", "your", "our", "the", "a", "an", "of", "to", "and", "or", "may", "with",
    "for", "in", "on", "by", "this", "that", "is", "are", "be", "will", "can", "any", "all",
    "us", "as", "from", "such",
)
_QUESTION_HEADS = ("what", "how", "do", "does", "can", "is", "will", "who", "when", "why")
_ONSETS = ("b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cr", "dr", "gl", "pl", "st", "tr", "sh", "ch")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou", "ea")


@dataclass(frozen=True)
class SyntheticConfig:
    vocab_size: int = 1000
    n_topics: int = 10
    topic_vocab: int = 50
    head_words: int = 6
    shared_head_words: int = 2
    n_train_queries: int = 40
    n_test_queries: int = 200
    positives_per_query: int = 3
    sentences_per_doc: int = 64
    corpus_size: int = 5000
    relevant_per_topic: int = 200
    decoys_per_topic: int = 100
    corpus_doc_size: int = 50
    filler_min: int = 3
    filler_max: int = 6
    zipf: float = 0.5
    decoy_markers: int = 20
    seed: int = 7

    def __post_init__(self) -> None:
        needed = self.n_topics * self.topic_vocab + len(_FUNCTION_WORDS) + len(_QUESTION_HEADS) + 50
        if self.vocab_size < needed:
            raise ValueError(f"vocab_size must be >= {needed}")
        planted = self.n_topics * (self.relevant_per_topic + self.decoys_per_topic)
        if planted > self.corpus_size:
            raise ValueError("corpus_size too small for the planted sentences")
        if self.positives_per_query / self.sentences_per_doc > 0.5:
            raise ValueError("documents must be mostly negatives")


@dataclass
class Benchmark:
    config: SyntheticConfig
    documents: list[dict]
    train: list[dict]
    test: list[dict]
    truth: dict[int, int]          # corpus sentence_id -> topic (-1 = none)
    topic_category: dict[int, str]
    vocabulary: tuple[str, ...] = ()

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "docs": out / "docs.jsonl",
            "train": out / "train.jsonl",
            "test": out / "test.jsonl",
            "truth": out / "truth.jsonl",
        }
        write_jsonl(paths["docs"], self.documents)
        write_jsonl(paths["train"], self.train)
        write_jsonl(paths["test"], self.test)
        write_jsonl(paths["truth"], ({"sentence_id": s, "topic": t} for s, t in sorted(self.truth.items())))
        write_jsonl(out / "synthetic_config.jsonl", [asdict(self.config)])
        return paths


def _pseudo_words(n: int, rng: np.random.Generator, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < n:
        syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[int(rng.integers(len(_ONSETS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


class _Generator:
    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        taken = set(_FUNCTION_WORDS) | set(_QUESTION_HEADS)
        n_content = cfg.vocab_size - len(_FUNCTION_WORDS) - len(_QUESTION_HEADS)
        content = _pseudo_words(n_content, self.rng, taken)
        tv = cfg.topic_vocab
        self.topic_words = [content[t * tv : (t + 1) * tv] for t in range(cfg.n_topics)]
        # Sibling topics (0,1), (2,3), ... share their leading head words.
        for t in range(1, cfg.n_topics, 2):
            self.topic_words[t][: cfg.shared_head_words] = self.topic_words[t - 1][: cfg.shared_head_words]
        self.background = content[cfg.n_topics * tv :]
        # Tail words of a topic form a family: a shared stem plus a short ending.
        # Siblings share the stem but not the words.
        stems: list[str] = []
        for t in range(cfg.n_topics):
            stems.append(stems[t - 1] if t % 2 == 1 else _pseudo_words(1, self.rng, taken)[0][:4])
        for t in range(cfg.n_topics):
            family: list[str] = []
            while len(family) < tv - cfg.head_words:
                w = stems[t] + _ONSETS[int(self.rng.integers(len(_ONSETS)))] + _VOWELS[int(self.rng.integers(len(_VOWELS)))]
                if w not in taken:
                    taken.add(w)
                    family.append(w)
            self.topic_words[t][cfg.head_words :] = family
        # Shared heads and stem families change the number of distinct words;
        # resize the background pool so the vocabulary is exactly vocab_size.
        n_topic_words = len({w for tw in self.topic_words for w in tw})
        room = cfg.vocab_size - len(set(_FUNCTION_WORDS) | set(_QUESTION_HEADS)) - n_topic_words
        if room < len(self.background):
            self.background = self.background[:room]
        else:
            self.background = self.background + _pseudo_words(room - len(self.background), self.rng, taken)
        self.markers = self.background[: cfg.decoy_markers]
        self.background = self.background[cfg.decoy_markers :]
        ranks = np.arange(1, tv - cfg.head_words + 1, dtype=float)
        w = ranks ** -cfg.zipf
        self.tail_p = w / w.sum()
        self.used: set[str] = set()

    def vocabulary(self) -> tuple[str, ...]:
        words = list(_FUNCTION_WORDS) + list(_QUESTION_HEADS) + self.markers + self.background
        for tw in self.topic_words:
            words += [w for w in tw if w not in words]
        return tuple(dict.fromkeys(words))

    def _choice(self, seq, size=None, p=None, replace=True):
        idx = self.rng.choice(len(seq), size=size, p=p, replace=replace)
        return [seq[i] for i in np.atleast_1d(idx)]

    def _filler(self, n: int) -> list[str]:
        out = []
        for _ in range(n):
            if self.rng.random() < 0.45:
                out.append(_FUNCTION_WORDS[int(self.rng.integers(len(_FUNCTION_WORDS)))])
            else:
                out.append(self.background[int(self.rng.integers(len(self.background)))])
        return out

    def _finish(self, words: list[str]) -> str | None:
        self.rng.shuffle(words)
        text = normalize_text(" ".join(words).capitalize() + ".")
        if text in self.used:
            return None
        self.used.add(text)
        return text

    def _make(self, build) -> str:
        while True:
            text = self._finish(build())
            if text is not None:
                return text

    def relevant(self, t: int) -> str:
        def build():
            h = self.cfg.head_words
            heads = self._choice(self.topic_words[t][:h], size=int(self.rng.integers(1, 3)), replace=False)
            tail = self._choice(self.topic_words[t][h:], size=int(self.rng.integers(1, 4)), p=self.tail_p, replace=False)
            return heads + tail + self._filler(int(self.rng.integers(self.cfg.filler_min, self.cfg.filler_max + 1)))
        return self._make(build)

    def decoy(self, t: int) -> str:
        def build():
            head = self.topic_words[t][int(self.rng.integers(self.cfg.head_words))]
            marks = self._choice(self.markers, size=min(2, len(self.markers)), replace=False) if self.markers else []
            return [head] + marks + self._filler(int(self.rng.integers(self.cfg.filler_min + 1, self.cfg.filler_max + 3)))
        return self._make(build)

    def background_sentence(self) -> str:
        return self._make(lambda: self._filler(int(self.rng.integers(self.cfg.filler_min + 2, self.cfg.filler_max + 4))))

    def query(self, t: int) -> str:
        while True:
            heads = self.topic_words[t][: self.cfg.head_words]
            words = self._choice(heads, size=int(self.rng.integers(2, 4)), replace=False)
            fn = [_FUNCTION_WORDS[int(i)] for i in self.rng.integers(len(_FUNCTION_WORDS), size=2)]
            qh = _QUESTION_HEADS[int(self.rng.integers(len(_QUESTION_HEADS)))]
            body = words + fn
            self.rng.shuffle(body)
            text = normalize_text(qh.capitalize() + " " + " ".join(body) + "?")
            if text not in self.used:
                self.used.add(text)
                return text


BENCHMARK_CONFIG = """\
# Experiment configuration for the planted-topic benchmark written alongside it.
# A and B see character trigrams; C, the final model's encoder, sees words only.
corpus = corpus.l
train_qa = train.jsonl
test_qa = test.jsonl
out_dir = report
specs = A,B,C
final_spec = C
spec.A.features = word1,char3
spec.A.hash_seed = 1
spec.A.epochs = 15
spec.B.features = char3
spec.B.domain = true
spec.B.hash_seed = 2
spec.B.epochs = 15
spec.C.features = word1
spec.C.domain = true
spec.C.hash_seed = 3
spec.C.epochs = 15
oracle.threshold = 0.97
final.class_weight = gold
k = 50
topk_sweep = 10,50,100
presets = baseline,single:A,single:A:no-oracle,single:B,single:B:no-oracle,single:C,single:C:no-oracle,baseline-e,era,era-d
seeds = 1,2,3,4
"""


def write_benchmark_config(out_dir: str | Path, name: str = "experiment.cfg") -> Path:
    """Write the experiment configuration tuned for the default benchmark."""
    p = Path(out_dir) / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(BENCHMARK_CONFIG, encoding="utf-8", newline="\n")
    return p


def generate(cfg: SyntheticConfig = SyntheticConfig()) -> Benchmark:
    g = _Generator(cfg)
    rng = g.rng
    topic_category = {t: DEFAULT_CATEGORIES[t % len(DEFAULT_CATEGORIES)] for t in range(cfg.n_topics)}

    # unlabeled retrieval corpus
    labeled: list[tuple[str, int]] = []
    for t in range(cfg.n_topics):
        labeled += [(g.relevant(t), t) for _ in range(cfg.relevant_per_topic)]
        labeled += [(g.decoy(t), -1) for _ in range(cfg.decoys_per_topic)]
    labeled += [(g.background_sentence(), -1) for _ in range(cfg.corpus_size - len(labeled))]
    order = rng.permutation(len(labeled))
    labeled = [labeled[i] for i in order]
    documents = []
    for d, start in enumerate(range(0, len(labeled), cfg.corpus_doc_size)):
        chunk = labeled[start : start + cfg.corpus_doc_size]
        documents.append({"doc_id": f"policy-{d:04d}", "text": " ".join(s for s, _ in chunk)})
    truth = {sentence_id(s): t for s, t in labeled}

    def split(n_queries: int, prefix: str) -> list[dict]:
        records = []
        for qi in range(n_queries):
            t = qi % cfg.n_topics
            qid = f"{prefix}-{qi:03d}"
            qtext = g.query(t)
            sibling = t + 1 if t % 2 == 0 else t - 1
            sibling = sibling if sibling < cfg.n_topics else t
            sents: list[tuple[str, int]] = [(g.relevant(t), 1) for _ in range(cfg.positives_per_query)]
            n_neg = cfg.sentences_per_doc - cfg.positives_per_query
            hard = max(1, n_neg // 12)
            sents += [(g.decoy(t), 0) for _ in range(hard)]
            if sibling != t:
                sents += [(g.relevant(sibling), 0) for _ in range(hard)]
            others = [u for u in range(cfg.n_topics) if u != t]
            while len(sents) < cfg.sentences_per_doc:
                if rng.random() < 0.5:
                    sents.append((g.relevant(others[int(rng.integers(len(others)))]), 0))
                else:
                    sents.append((g.background_sentence(), 0))
            perm = rng.permutation(len(sents))
            for i in perm:
                s, z = sents[i]
                records.append({
                    "query_id": qid,
                    "query_text": qtext,
                    "sentence_text": s,
                    "label": z,
                    "category": topic_category[t],
                })
        return records

    train = split(cfg.n_train_queries, "train")
    test = split(cfg.n_test_queries, "test")
    return Benchmark(cfg, documents, train, test, truth, topic_category, g.vocabulary())
