"""Precision / recall / F1 over sentence-selection predictions."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import QADataset
from .errors import DataError

MICRO = "micro"
MACRO = "macro"


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    support: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int = 0) -> "Metrics":
        # Zero denominators give 0. F1 = 2tp / (2tp + fp + fn) is the harmonic mean in one division.
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        return cls(tp, fp, fn, tn, p, r, f, tp + fn)

    @property
    def correct(self) -> int:
        return self.tp + self.tn

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics.from_counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def _confusion(pred: set, gold_pairs) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    for p in gold_pairs:
        hit = p.key in pred
        if p.label == 1:
            if hit:
                tp += 1
            else:
                fn += 1
        elif hit:
            fp += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def _check_keys(predictions: set, gold: QADataset) -> None:
    unknown = predictions - gold.keys()
    if unknown:
        q, s = sorted(unknown)[0]
        raise DataError(f"prediction ({q}, {s}) is not a pair of the gold dataset ({len(unknown)} unknown)")


def evaluate(predictions: Iterable[tuple[str, int]], gold: QADataset, average: str = MICRO) -> Metrics:
    """Binary metrics of the positive class over every gold (query, sentence) pair.

    ``micro`` pools all pairs.  ``macro`` averages per-query precision,
    recall and F1 (counts are still pooled).
    """
    pred = set(predictions)
    _check_keys(pred, gold)
    pooled = Metrics.from_counts(*_confusion(pred, gold.pairs))
    if average == MICRO:
        return pooled
    if average != MACRO:
        raise ValueError(f"unknown average {average!r}")
    by_query: dict[str, list] = {}
    for p in gold.pairs:
        by_query.setdefault(p.query_id, []).append(p)
    per = [Metrics.from_counts(*_confusion(pred, ps)) for ps in by_query.values()]
    if not per:
        return pooled
    n = len(per)
    return Metrics(
        pooled.tp, pooled.fp, pooled.fn, pooled.tn,
        sum(m.precision for m in per) / n, sum(m.recall for m in per) / n, sum(m.f1 for m in per) / n,
        pooled.support,
    )


def evaluate_by_category(
    predictions: Iterable[tuple[str, int]],
    gold: QADataset,
    categories: Mapping[str, str] | None = None,
    average: str = MICRO,
) -> dict[str, Metrics]:
    """Metrics restricted to each category's queries; uncategorised queries go to "Others".

    Categories are reported in vocabulary order, then any extra tags sorted.
    """
    pred = set(predictions)
    _check_keys(pred, gold)
    cats = dict(gold.category_of())
    if categories:
        cats.update(categories)
    groups: dict[str, list] = {}
    for p in gold.pairs:
        groups.setdefault(cats.get(p.query_id) or "Others", []).append(p)
    order = [c for c in gold.categories if c in groups] + sorted(set(groups) - set(gold.categories))
    out = {}
    for c in order:
        sub = QADataset(tuple(groups[c]), gold.categories)
        out[c] = evaluate(pred & sub.keys(), sub, average)
    return out


def category_shares(gold: QADataset, categories: Mapping[str, str] | None = None) -> dict[str, float]:
    """Fraction of gold queries per category."""
    cats = dict(gold.category_of())
    if categories:
        cats.update(categories)
    qids = gold.query_ids()
    counts: dict[str, int] = {}
    for q in qids:
        c = cats.get(q) or "Others"
        counts[c] = counts.get(c, 0) + 1
    return {c: n / len(qids) for c, n in counts.items()} if qids else {}


@dataclass(frozen=True)
class Summary:
    """Mean and sample standard deviation of one metric over seeds (std 0 for one seed)."""

    mean: float
    std: float
    values: tuple[float, ...]

    @classmethod
    def of(cls, values: Sequence[float]) -> "Summary":
        vals = tuple(float(v) for v in values)
        if not vals:
            return cls(float("nan"), float("nan"), ())
        mean = statistics.fmean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return cls(mean, std, vals)

    def fmt(self, scale: float = 100.0, digits: int = 1) -> str:
        return f"{self.mean * scale:.{digits}f}±{self.std * scale:.{digits}f}"


def summarize(runs: Sequence[Metrics]) -> dict[str, Summary]:
    return {
        "precision": Summary.of([m.precision for m in runs]),
        "recall": Summary.of([m.recall for m in runs]),
        "f1": Summary.of([m.f1 for m in runs]),
    }
