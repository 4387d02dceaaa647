"""Oracle filtering, ensemble union, and the merge into the final train corpus."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

from .classifier import PairClassifier, score_pairs
from .corpus import QADataset, QAPair, augmented_provenance
from .errors import DataError, SpecMismatchError
from .index import RetrievalSet

logger = logging.getLogger(__name__)


class _Pair(NamedTuple):
    query_id: str
    query_text: str
    sentence_id: int
    sentence_text: str


def _lookup(texts: Mapping | Callable, key):
    if callable(texts):
        return texts(key)
    try:
        return texts[key]
    except KeyError:
        raise DataError(f"no text for {key!r}") from None


def filter_retrievals(
    rl: RetrievalSet,
    oracle: PairClassifier,
    enc,
    query_texts: Mapping[str, str],
    sentence_texts: Mapping[int, str] | Callable[[int], str],
    common_oracle: bool = False,
) -> RetrievalSet:
    """Keep the entries the oracle classifies as relevant; ranks are preserved.

    The oracle must be bound to ``enc``.  The retrievals must come from the
    same spec unless ``common_oracle`` is set (shared-oracle ablation).
    """
    if oracle.spec_id != enc.spec.spec_id:
        raise SpecMismatchError(f"oracle {oracle.spec_id!r} is not bound to encoder {enc.spec.spec_id!r}")
    if not common_oracle and rl.spec_id != oracle.spec_id:
        raise SpecMismatchError(f"retrievals from {rl.spec_id!r} filtered by oracle {oracle.spec_id!r}")
    if not rl.entries:
        return RetrievalSet(rl.spec_id, rl.k, (), True)
    pairs = [_Pair(e.query_id, _lookup(query_texts, e.query_id), e.sentence_id, _lookup(sentence_texts, e.sentence_id)) for e in rl.entries]
    keep = score_pairs(oracle, pairs, enc) >= oracle.threshold
    return RetrievalSet(rl.spec_id, rl.k, tuple(e for e, ok in zip(rl.entries, keep) if ok), True)


def aggregate(
    filtered_sets: Sequence[RetrievalSet],
    query_index: Mapping[str, tuple[str, str | None]],
    sentence_texts: Mapping[int, str] | Callable[[int], str],
) -> tuple[QAPair, ...]:
    """Union of the per-encoder sets, deduplicated on (query_id, sentence_id).

    Order is first appearance in declaration order; each pair's provenance
    lists every contributing spec_id.  All labels are 1.
    """
    spec_ids = [s.spec_id for s in filtered_sets]
    if len(set(spec_ids)) != len(spec_ids):
        raise DataError(f"aggregate: repeated spec_ids {spec_ids}")
    contributors: dict[tuple[str, int], list[str]] = {}
    for rs in filtered_sets:
        for e in rs.entries:
            contributors.setdefault(e.key, []).append(rs.spec_id)
    out = []
    for (qid, sid), specs in contributors.items():
        if qid not in query_index:
            raise DataError(f"aggregate: query {qid!r} is not in the gold query set")
        qtext, category = query_index[qid]
        out.append(QAPair(qid, qtext, sid, _lookup(sentence_texts, sid), 1, category, augmented_provenance(specs)))
    return tuple(out)


@dataclass(frozen=True)
class MergeStats:
    gold_pairs: int
    augmented_in: int
    augmented_added: int
    conflict_dropped: int
    conflict_dropped_negative: int
    positive_rate_before: float
    positive_rate_after: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def build_training_set(gold: QADataset, d_aug: Sequence[QAPair]) -> tuple[QADataset, MergeStats]:
    """T = gold plus augmented pairs; on a key collision the gold record wins."""
    gold_keys = gold.keys()
    queries = gold.query_index
    added = []
    dropped = dropped_neg = 0
    gold_label = {p.key: p.label for p in gold.pairs}
    for p in d_aug:
        if p.query_id not in queries:
            raise DataError(f"augmented pair references query {p.query_id!r} outside the gold query set")
        if p.label != 1 or not p.is_augmented:
            raise DataError(f"augmented pair {p.key} must be label 1 with augmented provenance")
        if p.key in gold_keys:
            dropped += 1
            dropped_neg += gold_label[p.key] == 0
            continue
        added.append(p)
    t = QADataset(gold.pairs + tuple(added), gold.categories)
    before = gold.stats()["positive_rate"]
    after = t.stats()["positive_rate"]
    stats = MergeStats(gold.m, len(d_aug), len(added), dropped, int(dropped_neg), before, after)
    if dropped:
        logger.info("build_training_set: %d augmented pairs collided with gold and were dropped", dropped)
    return t, stats


# --- experiment presets ---

@dataclass(frozen=True)
class Preset:
    """One row family of the comparison tables.

    ``specs`` retrieve; ``oracle`` is None (no filtering), "own" (each spec
    filtered by its own oracle) or a spec_id (shared oracle).
    """

    name: str
    specs: tuple[str, ...]
    oracle: str | None = "own"

    @property
    def augments(self) -> bool:
        return bool(self.specs)

    @property
    def filtered(self) -> bool:
        return self.oracle is not None


def resolve_preset(name: str, spec_ids: Sequence[str], domain_specs: Sequence[str] = ()) -> Preset:
    """Presets: baseline, era, era-d, baseline-e, single:<spec>[:no-oracle], common-oracle:<spec>."""
    spec_ids = tuple(spec_ids)

    def known(s: str) -> str:
        if s not in spec_ids:
            raise ValueError(f"preset {name!r}: unknown spec {s!r}")
        return s

    if name == "baseline":
        return Preset(name, (), None)
    if name == "era":
        return Preset(name, spec_ids, "own")
    if name == "era-d":
        if not domain_specs:
            raise ValueError("preset 'era-d' needs at least one spec declared domain=true")
        return Preset(name, tuple(s for s in spec_ids if s in set(domain_specs)), "own")
    if name == "baseline-e":
        return Preset(name, spec_ids, None)
    if name.startswith("single:"):
        rest = name[len("single:"):]
        if rest.endswith(":no-oracle"):
            return Preset(name, (known(rest[: -len(":no-oracle")]),), None)
        return Preset(name, (known(rest),), "own")
    if name.startswith("common-oracle:"):
        return Preset(name, spec_ids, known(name[len("common-oracle:"):]))
    raise ValueError(f"unknown preset {name!r}")


@dataclass
class SpecArtifacts:
    """Everything trained for one encoder spec within one seed."""

    spec_id: str
    encoder: object
    oracle: PairClassifier
    index: object
    raw: RetrievalSet
    filtered: dict[int, RetrievalSet] = field(default_factory=dict)


@dataclass
class AugmentationRun:
    preset: str
    specs: tuple[str, ...]
    k: int
    per_spec: dict[str, dict[str, RetrievalSet]]
    d_aug: tuple[QAPair, ...]
    t: QADataset
    merge: MergeStats

    def counts(self) -> dict:
        per = {}
        for s, v in self.per_spec.items():
            raw = len(v["raw"])
            kept = len(v["filtered"]) if "filtered" in v else raw
            per[s] = {"retrieved": raw, "filtered_out": raw - kept, "kept": kept}
        union_in = sum(c["kept"] for c in per.values())
        return {
            "per_spec": per,
            "d_aug": len(self.d_aug),
            "deduplicated": union_in - len(self.d_aug),
            "conflict_dropped": self.merge.conflict_dropped,
            "t_pairs": self.t.m,
        }


def run_augmentation(
    preset: Preset,
    gold: QADataset,
    artifacts: Mapping[str, SpecArtifacts],
    sentence_texts: Mapping[int, str] | Callable[[int], str],
    k: int,
) -> AugmentationRun:
    """Filter (per preset), union, and merge with gold at retrieval depth k."""
    query_texts = {q: t for q, (t, _) in gold.query_index.items()}
    per_spec: dict[str, dict[str, RetrievalSet]] = {}
    chosen = []
    for s in preset.specs:
        art = artifacts[s]
        raw = art.raw.truncate(k) if art.raw.k != k else art.raw
        entry = {"raw": raw}
        if preset.oracle is None:
            chosen.append(raw)
        elif preset.oracle == "own":
            if k not in art.filtered:
                art.filtered[k] = filter_retrievals(raw, art.oracle, art.encoder, query_texts, sentence_texts)
            entry["filtered"] = art.filtered[k]
            chosen.append(art.filtered[k])
        else:
            judge = artifacts[preset.oracle]
            fl = filter_retrievals(raw, judge.oracle, judge.encoder, query_texts, sentence_texts, common_oracle=True)
            entry["filtered"] = fl
            chosen.append(fl)
        per_spec[s] = entry
    d_aug = aggregate(chosen, gold.query_index, sentence_texts)
    t, merge = build_training_set(gold, d_aug)
    return AugmentationRun(preset.name, preset.specs, k, per_spec, d_aug, t, merge)
