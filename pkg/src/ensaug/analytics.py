"""Diversity analytics between retrieved corpora: exact-match Venn regions and corpus BLEU."""

from __future__ import annotations

import bisect
import math
import re
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

BLEU_CONFIG = "corpus BLEU: n=1..4, uniform weights, brevity penalty, no smoothing, full reference list pooled per candidate"

_TOK = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class OverlapStats:
    names: tuple[str, ...]
    # membership pattern (tuple of names) -> number of keys in exactly those sets
    regions: dict[tuple[str, ...], int]
    union: int

    def percent(self, region: tuple[str, ...]) -> float:
        return 100.0 * self.regions.get(region, 0) / self.union if self.union else 0.0

    def intersection(self, names: Iterable[str]) -> int:
        """Keys shared by at least the given sets."""
        want = set(names)
        return sum(c for r, c in self.regions.items() if want <= set(r))


def overlap_stats(sets: Sequence, names: Sequence[str] | None = None) -> OverlapStats:
    """Exact-match Venn region counts on (query_id, sentence_id) keys.

    Each element of ``sets`` is a RetrievalSet or any iterable of keys.
    Every non-empty membership pattern is reported, including empty regions.
    """
    if len(sets) < 2:
        raise ValueError("overlap_stats needs at least two sets")
    keysets = [s.keys() if hasattr(s, "keys") and callable(s.keys) else set(s) for s in sets]
    if names is None:
        names = [getattr(s, "spec_id", f"set{i}") for i, s in enumerate(sets)]
    names = tuple(names)
    if len(set(names)) != len(names):
        names = tuple(f"{n}#{i}" for i, n in enumerate(names))
    membership: dict = {}
    for i, ks in enumerate(keysets):
        for key in ks:
            membership.setdefault(key, []).append(i)
    regions = {tuple(names[i] for i in combo): 0 for r in range(1, len(names) + 1) for combo in combinations(range(len(names)), r)}
    for idx in membership.values():
        regions[tuple(names[i] for i in idx)] += 1
    return OverlapStats(names, regions, len(membership))


def render_overlap(stats: OverlapStats, title: str) -> str:
    head = "region (exactly these sets)"
    width = max([len(head), len("union")] + [len(" & ".join(r)) for r in stats.regions])
    lines = [title, f"{head.ljust(width)}  {'count':>7}  {'%union':>7}"]
    for region, count in sorted(stats.regions.items(), key=lambda kv: (len(kv[0]), kv[0])):
        lines.append(f"{' & '.join(region).ljust(width)}  {count:>7d}  {stats.percent(region):>6.2f}%")
    lines.append(f"{'union'.ljust(width)}  {stats.union:>7d}  100.00%")
    return "\n".join(lines)


def tokenize(text: str) -> list[str]:
    return _TOK.findall(text)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidate_sentences: Sequence[str], reference_sentences: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU of one sentence set against another.

    Every candidate is scored against the whole reference list: n-gram
    counts are clipped by the maximum count in any single reference, and
    the effective reference length is the reference length closest to the
    candidate (shorter on ties).  Unsmoothed, so any zero precision gives 0.
    """
    if not candidate_sentences:
        raise ValueError("corpus_bleu: empty candidate list")
    if not reference_sentences:
        raise ValueError("corpus_bleu: empty reference list")
    refs = [tokenize(r) for r in reference_sentences]
    max_ref: list[Counter] = []
    for n in range(1, max_n + 1):
        best: Counter = Counter()
        for r in refs:
            for g, c in _ngrams(r, n).items():
                if c > best[g]:
                    best[g] = c
        max_ref.append(best)
    ref_lens = sorted(len(r) for r in refs)
    num = [0] * max_n
    den = [0] * max_n
    cand_len = ref_len = 0
    for sent in candidate_sentences:
        toks = tokenize(sent)
        c = len(toks)
        cand_len += c
        i = bisect.bisect_left(ref_lens, c)
        options = ref_lens[max(i - 1, 0) : i + 1]
        ref_len += min(options, key=lambda r: (abs(r - c), r))
        for n in range(1, max_n + 1):
            counts = _ngrams(toks, n)
            den[n - 1] += sum(counts.values())
            num[n - 1] += sum(min(cnt, max_ref[n - 1][g]) for g, cnt in counts.items())
    if cand_len == 0 or any(d == 0 for d in den) or any(x == 0 for x in num):
        return 0.0
    log_p = sum(math.log(x / d) for x, d in zip(num, den)) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)
