from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ensaug.analytics import corpus_bleu, overlap_stats, render_overlap
from ensaug.classifier import ClassifierHyper, train_pair_classifier
from ensaug.corpus import QADataset, sentence_id
from ensaug.encoder import EncoderSpec, RetrieverHyper, train_retriever
from ensaug.errors import DataError, SpecMismatchError
from ensaug.index import build_index, retrieve_all
from ensaug.pipeline import (
    SpecArtifacts,
    aggregate,
    build_training_set,
    filter_retrievals,
    resolve_preset,
    run_augmentation,
)
from ensaug.corpus import Corpus, PolicySentence, build_corpus

from conftest import make_pair
from handfixtures import (
    BLEU_CANDIDATES,
    BLEU_EXPECTED,
    BLEU_REFERENCES,
    IE_REGIONS,
    IE_SETS,
    IE_UNION,
    keyed_set,
    planted_oracle_setup,
)


def _texts(n=30):
    return {s: f"sentence {s}" for s in range(n)}


QIDX = {"q": ("query?", "Data Collection"), "q2": ("other?", None)}


# --- filtering ---

def test_planted_oracle_removes_exactly_violations():
    enc, oracle, rs, relevant = planted_oracle_setup()
    texts = {s: f"s{s}" for s in range(1, 9)}
    out = filter_retrievals(rs, oracle, enc, {"q1": "a", "q2": "b"}, texts)
    assert out.filtered and out.keys() == relevant
    assert len(out) == len(rs) // 2
    ranks = {e.key: e.rank for e in rs.entries}
    assert all(e.rank == ranks[e.key] for e in out.entries)


def test_threshold_extremes():
    enc, oracle, rs, _ = planted_oracle_setup()
    texts = {s: f"s{s}" for s in range(1, 9)}
    qt = {"q1": "a", "q2": "b"}
    everything = filter_retrievals(rs, oracle.with_threshold(1e-15), enc, qt, texts)
    assert everything.entries == rs.entries
    assert len(filter_retrievals(rs, oracle.with_threshold(1 - 1e-15), enc, qt, texts)) == 0


def test_filter_spec_mismatch():
    enc, oracle, rs, _ = planted_oracle_setup()
    other = keyed_set("Q", [1, 2], query_id="q1", filtered=False)
    with pytest.raises(SpecMismatchError):
        filter_retrievals(other, oracle, enc, {"q1": "x"}, {1: "a", 2: "b"})
    shared = filter_retrievals(other, oracle, enc, {"q1": "x"}, {1: "a", 2: "b"}, common_oracle=True)
    assert shared.keys() == {("q1", 1)} and shared.spec_id == "Q"


@given(st.sets(st.integers(1, 40), max_size=20), st.floats(0.01, 0.99))
def test_filter_output_is_subset(sids, tau):
    enc, oracle, _, _ = planted_oracle_setup()
    enc.passages.update({s: np.array([np.cos(s), np.sin(s)]) for s in range(1, 41)})
    rs = keyed_set("P", sorted(sids), query_id="q1", filtered=False)
    out = filter_retrievals(rs, oracle.with_threshold(tau), enc, {"q1": "a"}, {s: "t" for s in range(1, 41)})
    assert out.keys() <= rs.keys()


# --- aggregation ---

def test_aggregate_identical_and_disjoint():
    a = keyed_set("A", [1, 2, 3])
    assert len(aggregate([a, keyed_set("B", [1, 2, 3])], QIDX, _texts())) == 3
    assert len(aggregate([a, keyed_set("B", [4, 5])], QIDX, _texts())) == 5


def test_aggregate_inclusion_exclusion_and_provenance():
    sets = [keyed_set(n, s) for n, s in IE_SETS.items()]
    d_aug = aggregate(sets, QIDX, _texts())
    assert len(d_aug) == IE_UNION
    by_key = {p.key: p for p in d_aug}
    assert by_key[("q", 1)].augmented_by == ("A", "C")
    assert by_key[("q", 20)].augmented_by == ("C",)
    assert all(p.label == 1 and p.is_augmented and p.category == "Data Collection" for p in d_aug)


def test_aggregate_errors():
    with pytest.raises(DataError, match="repeated"):
        aggregate([keyed_set("A", [1]), keyed_set("A", [2])], QIDX, _texts())
    with pytest.raises(DataError, match="gold query"):
        aggregate([keyed_set("A", [1], query_id="zz")], QIDX, _texts())


@given(st.lists(st.sets(st.integers(0, 29), max_size=15), min_size=1, max_size=4))
def test_aggregate_size_bounds(groups):
    sets = [keyed_set(f"S{i}", sorted(g)) for i, g in enumerate(groups)]
    n = len(aggregate(sets, QIDX, _texts()))
    assert max(len(s) for s in sets) <= n <= sum(len(s) for s in sets)


# --- merge ---

def _gold():
    return QADataset((
        make_pair("q", "query?", "s1", 0, "Data Collection"),
        make_pair("q", "query?", "s2", 1, "Data Collection"),
        make_pair("q2", "other?", "s3", 0),
    ))


def test_build_training_set_conflicts():
    gold = _gold()
    sid = {t: sentence_id(t) for t in ("s1", "s2", "s4")}
    texts = {v: k for k, v in sid.items()}
    d_aug = aggregate([keyed_set("A", [sid["s1"], sid["s2"], sid["s4"]])], gold.query_index, texts)
    t, stats = build_training_set(gold, d_aug)
    assert stats.conflict_dropped == 2 and stats.conflict_dropped_negative == 1
    assert stats.augmented_added == 1 and t.m == 4
    assert t.query_ids() == gold.query_ids()
    assert {p.key: p.label for p in t.pairs}[("q", sid["s1"])] == 0
    assert stats.positive_rate_before == pytest.approx(1 / 3) and stats.positive_rate_after == pytest.approx(2 / 4)


def test_build_training_set_trivial_cases():
    gold = _gold()
    t, stats = build_training_set(gold, ())
    assert t.pairs == gold.pairs and stats.conflict_dropped == 0
    d_aug = aggregate([keyed_set("A", [7, 8]), keyed_set("B", [9], query_id="q2")], gold.query_index, {7: "x", 8: "y", 9: "z"})
    t, _ = build_training_set(gold, d_aug)
    assert t.m == gold.m + 3


def test_build_training_set_rejects_foreign_query_and_gold_labels():
    gold = _gold()
    with pytest.raises(DataError):
        build_training_set(gold, (make_pair("new", "?", "s9", 1, provenance="augmented:A"),))
    with pytest.raises(DataError):
        build_training_set(gold, (make_pair("q", "query?", "s9", 1),))


# --- presets ---

def test_presets():
    ids = ["A", "B", "C"]
    assert resolve_preset("baseline", ids).specs == ()
    assert resolve_preset("era", ids).specs == ("A", "B", "C")
    assert resolve_preset("era-d", ids, ["B", "C"]).specs == ("B", "C")
    be = resolve_preset("baseline-e", ids)
    assert be.specs == ("A", "B", "C") and not be.filtered
    assert resolve_preset("single:B", ids).oracle == "own"
    assert resolve_preset("single:B:no-oracle", ids).oracle is None
    assert resolve_preset("common-oracle:A", ids).oracle == "A"
    for bad in ("single:Z", "common-oracle:Z", "nope"):
        with pytest.raises(ValueError):
            resolve_preset(bad, ids)
    with pytest.raises(ValueError):
        resolve_preset("era-d", ids, [])


def _small_world():
    topics = ["cookies", "location", "email", "payment"]
    sents = []
    for t in topics:
        sents += [f"We use {t} data for purpose {i}." for i in range(6)]
    sents += [f"Filler clause number {i}." for i in range(20)]
    corpus = build_corpus([PolicySentence(sentence_id(s), "d", i, s) for i, s in enumerate(sents)])
    pairs = []
    for qi, t in enumerate(topics):
        for si in range(6):
            text = f"We use {t} data for purpose {si}." if si < 2 else f"Filler clause number {qi * 4 + si}."
            pairs.append(make_pair(f"q{qi}", f"Do you collect {t} data?", text, int(si < 2), "Data Collection"))
    gold = QADataset(tuple(pairs))
    arts = {}
    for sid in ("A", "B"):
        enc = train_retriever(gold, EncoderSpec(sid, dim=6, feature_space=256, seed=ord(sid)), RetrieverHyper(batch_size=4, epochs=5))
        oracle = train_pair_classifier(gold, enc, ClassifierHyper(epochs=50))
        idx = build_index(corpus, enc)
        arts[sid] = SpecArtifacts(sid, enc, oracle, idx, retrieve_all(idx, gold, enc, 5))
    return corpus, gold, arts


def test_run_augmentation_invariants_and_noop_oracle():
    corpus, gold, arts = _small_world()
    run = run_augmentation(resolve_preset("era", ["A", "B"]), gold, arts, corpus.text, 5)
    assert run.t.query_ids() == gold.query_ids()
    assert all(p.label == 1 and p.augmented_by for p in run.t.pairs if p.is_augmented)
    filtered_keys = set().union(*(v["filtered"].keys() for v in run.per_spec.values()))
    assert {p.key for p in run.d_aug} <= filtered_keys
    c = run.counts()
    assert c["d_aug"] == len(run.d_aug) and c["t_pairs"] == run.t.m
    assert c["conflict_dropped"] + run.merge.augmented_added == c["d_aug"]

    for s in arts:
        arts[s].oracle = arts[s].oracle.with_threshold(1e-15)
        arts[s].filtered.clear()
    with_oracle = run_augmentation(resolve_preset("single:A", ["A", "B"]), gold, arts, corpus.text, 5)
    without = run_augmentation(resolve_preset("single:A:no-oracle", ["A", "B"]), gold, arts, corpus.text, 5)
    assert with_oracle.t.pairs == without.t.pairs


def test_run_augmentation_depth_truncates():
    corpus, gold, arts = _small_world()
    run = run_augmentation(resolve_preset("baseline-e", ["A", "B"]), gold, arts, corpus.text, 2)
    assert all(len(v["raw"]) == 2 * 4 for v in run.per_spec.values())


# --- overlap and BLEU ---

def test_overlap_regions():
    st_ = overlap_stats([keyed_set(n, s) for n, s in IE_SETS.items()])
    assert st_.regions == IE_REGIONS and st_.union == IE_UNION
    assert sum(st_.regions.values()) == st_.union
    assert st_.intersection(["A", "B"]) == 5
    same = overlap_stats([keyed_set("A", [1, 2]), keyed_set("B", [1, 2])])
    assert same.percent(("A", "B")) == 100.0
    disjoint = overlap_stats([{("q", 1)}, {("q", 2)}], ["X", "Y"])
    assert disjoint.regions[("X", "Y")] == 0
    with pytest.raises(ValueError):
        overlap_stats([{("q", 1)}])
    text = render_overlap(st_, "title")
    assert "A & B & C" in text and "union" in text


@given(st.lists(st.sets(st.integers(0, 20), max_size=12), min_size=2, max_size=4))
def test_overlap_regions_sum_to_union(groups):
    stats = overlap_stats([{("q", x) for x in g} for g in groups])
    assert sum(stats.regions.values()) == stats.union == len(set().union(*groups))


def test_bleu_fixtures():
    assert corpus_bleu(BLEU_CANDIDATES, BLEU_REFERENCES) == pytest.approx(BLEU_EXPECTED, abs=1e-9)
    assert corpus_bleu(BLEU_REFERENCES, BLEU_REFERENCES) == 1.0
    assert corpus_bleu(["alpha beta gamma delta"], ["epsilon zeta eta theta"]) == 0.0
    with pytest.raises(ValueError):
        corpus_bleu([], ["x"])


def test_bleu_brevity_penalty():
    # One candidate of 4 tokens fully inside a 6-token reference: all precisions 1, BP = exp(1 - 6/4).
    got = corpus_bleu(["a b c d"], ["a b c d e f"])
    assert got == pytest.approx(np.exp(1 - 6 / 4), abs=1e-12)
