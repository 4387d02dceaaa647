from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from ensaug.corpus import QADataset, QAPair, sentence_id

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_pair(qid: str, qtext: str, stext: str, label: int, category: str | None = None, provenance: str = "gold") -> QAPair:
    return QAPair(qid, qtext, sentence_id(stext), stext, label, category, provenance)


@pytest.fixture
def tiny_qa() -> QADataset:
    """4 queries x 10 sentences, 2 positives per query; query topics planted in shared tokens."""
    pairs = []
    topics = ["cookies", "location", "email", "payment"]
    for qi, topic in enumerate(topics):
        for si in range(10):
            label = 1 if si < 2 else 0
            text = f"We use {topic} data in way {si}." if label else f"Unrelated clause {qi}-{si} about {topics[(qi + 1) % 4]} terms."
            pairs.append(make_pair(f"q{qi}", f"Do you collect my {topic}?", text, label, "Data Collection"))
    return QADataset(tuple(pairs))
