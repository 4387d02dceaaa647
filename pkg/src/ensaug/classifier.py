"""Pairwise (query, sentence) relevance classifier.

Logistic regression over interaction features of the two tower embeddings:
``[q*p, |q-p|, (q+p)/2, q.p]`` (dimension 3d+1).  Unlike the retriever's
factorised dot product this scorer sees the pair jointly, so it can reject
pairs the retriever ranks highly.  It serves both as the per-encoder
filtering oracle and as the final QA model.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericalError, SpecMismatchError
from .io import read_container, write_container

logger = logging.getLogger(__name__)

_CLF_MAGIC = b"ENSAUGC1"
_LOGIT_CLIP = 30.0


def pair_feature_matrix(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if Q.shape != P.shape:
        raise ValueError(f"embedding shapes differ: {Q.shape} vs {P.shape}")
    prod = Q * P
    return np.hstack([prod, np.abs(Q - P), (Q + P) / 2.0, prod.sum(axis=1, keepdims=True)])


def pair_features(q_text: str, p_text: str, enc, query_id: str | None = None, sentence_id: int | None = None) -> np.ndarray:
    q = enc.encode_queries([q_text], None if query_id is None else [query_id])
    p = enc.encode_passages([p_text], None if sentence_id is None else [sentence_id])
    return pair_feature_matrix(q, p)[0]


def features_for_pairs(pairs: Sequence, enc) -> np.ndarray:
    """Feature rows for objects with query_id/query_text/sentence_id/sentence_text.

    Each distinct query and sentence is encoded once.
    """
    if not pairs:
        return np.zeros((0, 3 * enc.spec.dim + 1))
    qs = dict((p.query_id, p.query_text) for p in pairs)
    ss = dict((p.sentence_id, p.sentence_text) for p in pairs)
    q_ids, s_ids = list(qs), list(ss)
    Qe = enc.encode_queries([qs[q] for q in q_ids], q_ids)
    Pe = enc.encode_passages([ss[s] for s in s_ids], s_ids)
    q_row = {q: i for i, q in enumerate(q_ids)}
    s_row = {s: i for i, s in enumerate(s_ids)}
    Q = Qe[[q_row[p.query_id] for p in pairs]]
    P = Pe[[s_row[p.sentence_id] for p in pairs]]
    return pair_feature_matrix(Q, P)


def logistic_loss_and_grad(X: np.ndarray, z: np.ndarray, w: np.ndarray, b: float, l2: float = 0.0, class_weight: float = 1.0) -> tuple[float, np.ndarray, float]:
    """Class-weighted mean logistic loss plus (l2/2)|w|^2; the bias is not penalised.

    Sample weights are class_weight for positives and 1 for negatives; the
    data term is normalised by the total sample weight.
    """
    s = X @ w + b
    c = np.where(z == 1, class_weight, 1.0)
    # log(1 + exp(-s)) for z=1, log(1 + exp(s)) for z=0
    nll = np.logaddexp(0.0, np.where(z == 1, -s, s))
    total = c.sum()
    loss = float((c * nll).sum() / total + 0.5 * l2 * (w @ w))
    r = c * (expit(s) - z) / total
    return loss, X.T @ r + l2 * w, float(r.sum())


@dataclass(frozen=True)
class ClassifierHyper:
    learning_rate: float = 0.5
    epochs: int = 300
    l2: float = 1e-3
    class_weight: float | None = None  # None -> negatives / positives of the training data
    threshold: float = 0.5
    seed: int = 0
    standardize: bool = True


@dataclass
class PairClassifier:
    spec_id: str
    d: int
    weights: np.ndarray
    bias: float
    threshold: float = 0.5
    class_weight: float = 1.0
    train_log: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (3 * self.d + 1,):
            raise ValueError(f"weights must have dimension {3 * self.d + 1}")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise NumericalError(f"classifier for {self.spec_id}: non-finite parameters")

    def scores_from_features(self, X: np.ndarray) -> np.ndarray:
        logits = np.clip(X @ self.weights + self.bias, -_LOGIT_CLIP, _LOGIT_CLIP)
        return expit(logits)

    def with_threshold(self, threshold: float) -> "PairClassifier":
        return PairClassifier(self.spec_id, self.d, self.weights.copy(), self.bias, threshold, self.class_weight, list(self.train_log))


def _check_spec(clf: PairClassifier, enc) -> None:
    if clf.spec_id != enc.spec.spec_id:
        raise SpecMismatchError(f"classifier bound to {clf.spec_id!r} used with encoder {enc.spec.spec_id!r}")


def train_pair_classifier(dataset, enc, hyper: ClassifierHyper = ClassifierHyper()) -> PairClassifier:
    pairs = list(dataset.pairs) if hasattr(dataset, "pairs") else list(dataset)
    z = np.array([p.label for p in pairs], dtype=np.float64)
    npos = int(z.sum())
    if npos == 0 or npos == len(z):
        raise ValueError("training data must contain both classes")
    X = features_for_pairs(pairs, enc)
    return fit_logistic(X, z, enc.spec.spec_id, enc.spec.dim, hyper)


def fit_logistic(X: np.ndarray, z: np.ndarray, spec_id: str, d: int, hyper: ClassifierHyper) -> PairClassifier:
    """Full-batch gradient descent; standardisation (if on) is folded back into w, b."""
    npos = float(z.sum())
    cw = hyper.class_weight if hyper.class_weight is not None else (len(z) - npos) / npos
    if not cw > 0:
        raise ValueError("class_weight must be positive")
    if hyper.standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd < 1e-12] = 1.0
    else:
        mu = np.zeros(X.shape[1])
        sd = np.ones(X.shape[1])
    Xs = (X - mu) / sd
    w = np.zeros(X.shape[1])
    b = 0.0
    log = []
    for epoch in range(hyper.epochs):
        loss, gw, gb = logistic_loss_and_grad(Xs, z, w, b, hyper.l2, cw)
        if not math.isfinite(loss):
            raise NumericalError(f"classifier for {spec_id}: non-finite loss at epoch {epoch}")
        w -= hyper.learning_rate * gw
        b -= hyper.learning_rate * gb
        log.append(loss)
    w_raw = w / sd
    b_raw = b - float(w_raw @ mu)
    return PairClassifier(spec_id, d, w_raw, b_raw, hyper.threshold, cw, log)


def score_pairs(clf: PairClassifier, pairs: Sequence, enc) -> np.ndarray:
    _check_spec(clf, enc)
    return clf.scores_from_features(features_for_pairs(list(pairs), enc))


def classify_pairs(clf: PairClassifier, pairs: Sequence, enc) -> np.ndarray:
    return (score_pairs(clf, pairs, enc) >= clf.threshold).astype(np.int64)


def score(clf: PairClassifier, q_text: str, p_text: str, enc, query_id: str | None = None, sentence_id: int | None = None) -> float:
    _check_spec(clf, enc)
    x = pair_features(q_text, p_text, enc, query_id, sentence_id)
    return float(clf.scores_from_features(x[None, :])[0])


def classify(clf: PairClassifier, q_text: str, p_text: str, enc, query_id: str | None = None, sentence_id: int | None = None) -> int:
    return int(score(clf, q_text, p_text, enc, query_id, sentence_id) >= clf.threshold)


def save_classifier(clf: PairClassifier, path: str | Path) -> None:
    header = {
        "spec_id": clf.spec_id,
        "d": clf.d,
        "tau": clf.threshold,
        "class_weight": clf.class_weight,
        "train_log": list(clf.train_log),
    }
    write_container(path, _CLF_MAGIC, header, [("weights", clf.weights), ("bias", np.array([clf.bias]))])


def load_classifier(path: str | Path) -> PairClassifier:
    header, arrays = read_container(path, _CLF_MAGIC)
    try:
        return PairClassifier(
            header["spec_id"], int(header["d"]), arrays["weights"], float(arrays["bias"][0]),
            float(header["tau"]), float(header["class_weight"]), list(header.get("train_log", [])),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: invalid classifier file ({exc})") from exc
