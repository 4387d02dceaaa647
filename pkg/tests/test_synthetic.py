from __future__ import annotations

import re
from collections import Counter
from dataclasses import replace

import pytest

from ensaug.config import load_config
from ensaug.corpus import ingest_corpus, load_qa_dataset
from ensaug.synthetic import SyntheticConfig, generate, write_benchmark_config

_WORD = re.compile(r"\w+")


@pytest.fixture(scope="module")
def bench():
    return generate(SyntheticConfig())


@pytest.fixture(scope="module")
def written(bench, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    return out, bench.write(out)


def _tokens(bench) -> set[str]:
    toks: set[str] = set()
    for r in bench.documents:
        toks |= set(_WORD.findall(r["text"].lower()))
    for r in bench.train + bench.test:
        toks |= set(_WORD.findall(r["query_text"].lower()))
        toks |= set(_WORD.findall(r["sentence_text"].lower()))
    return toks


def test_vocabulary_is_exactly_1000_words(bench):
    assert len(bench.vocabulary) == 1000 == len(set(bench.vocabulary))
    assert _tokens(bench) <= set(bench.vocabulary)


def test_training_split_shape(bench):
    per_query = Counter(r["query_id"] for r in bench.train if r["label"] == 1)
    assert len({r["query_id"] for r in bench.train}) == 40
    assert set(per_query.values()) == {3} and len(per_query) == 40


def test_positive_rate_at_most_five_percent(bench):
    for split in (bench.train, bench.test):
        rate = sum(r["label"] for r in split) / len(split)
        assert 0 < rate <= 0.05


def test_corpus_has_5000_sentences_and_200_relevant_per_topic(bench, written):
    _, paths = written
    corpus = ingest_corpus([paths["docs"]])
    assert corpus.size == 5000
    assert set(bench.truth) == set(corpus.ids())
    per_topic = Counter(t for t in bench.truth.values() if t >= 0)
    assert len(per_topic) == bench.config.n_topics
    assert set(per_topic.values()) == {200}


def test_written_splits_load_against_the_corpus(written):
    _, paths = written
    corpus = ingest_corpus([paths["docs"]])
    train = load_qa_dataset(paths["train"], corpus)
    test = load_qa_dataset(paths["test"], corpus)
    assert train.stats()["positives"] == 120
    assert not set(train.query_index) & set(test.query_index)


def test_generation_is_deterministic():
    cfg = SyntheticConfig(corpus_size=1000, relevant_per_topic=40, decoys_per_topic=20, n_test_queries=10)
    a, b = generate(cfg), generate(cfg)
    assert a.documents == b.documents and a.train == b.train and a.test == b.test
    c = generate(replace(cfg, seed=cfg.seed + 1))
    assert c.documents != a.documents


def test_benchmark_config_declares_three_distinct_specs(tmp_path):
    p = write_benchmark_config(tmp_path)
    cfg = load_config(p)
    assert len(cfg.spec_ids) == 3
    assert len({cfg.spec_config(s).spec.seed for s in cfg.spec_ids}) == 3
    assert cfg.topk_sweep == (10, 50, 100)
    assert len(cfg.seeds) == 4
    assert cfg.final_spec_id in cfg.spec_ids
    assert {"baseline", "baseline-e"} <= set(cfg.presets)


@pytest.mark.parametrize(
    "kw",
    [
        {"vocab_size": 100},
        {"corpus_size": 100},
        {"positives_per_query": 40, "sentences_per_doc": 64},
    ],
)
def test_invalid_configs_rejected(kw):
    with pytest.raises(ValueError):
        SyntheticConfig(**kw)
