from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from ensaug.encoder import (
    BiEncoder,
    EncoderSpec,
    RetrieverHyper,
    bucket,
    encode_passage,
    encode_query,
    feature_counts,
    feature_strings,
    featurize,
    featurize_batch,
    in_batch_loss,
    in_batch_loss_gradient,
    init_encoder,
    load_encoder,
    load_precomputed,
    loss_and_grad,
    loss_from_embeddings,
    same_query_mask,
    save_encoder,
    sim,
    train_retriever,
)
from ensaug.errors import DataError, NumericalError
from ensaug.io import write_jsonl

from gradcheck import central_diff, rel_error, random_loss_instance


def test_feature_strings_kinds():
    assert feature_strings("We share", ("word1",)) == ["w:we", "w:share"]
    assert feature_strings("We share", ("word2",)) == ["b:we share"]
    assert feature_strings("We", ("char3",)) == ["c:<we", "c:we>"]
    assert feature_strings("", ("word1", "word2", "char3")) == []


def test_bucket_is_seeded_and_bounded():
    vals = {bucket(f"w:{i}", 3, 16) for i in range(200)}
    assert vals <= set(range(16)) and len(vals) == 16
    assert bucket("w:x", 1, 1 << 20) != bucket("w:x", 2, 1 << 20)


def test_featurize_is_unit_norm_counts():
    spec = EncoderSpec("A", dim=2, feature_space=16, seed=5)
    fv = featurize("we share we", spec)
    counts = feature_counts("we share we", spec)
    assert list(fv.indices) == sorted(counts)
    c = np.array([counts[i] for i in sorted(counts)], dtype=float)
    np.testing.assert_allclose(fv.values, c / np.linalg.norm(c))
    assert np.linalg.norm(fv.dense()) == pytest.approx(1.0)
    assert len(featurize("", spec)) == 0


def test_one_word_difference_touches_only_its_buckets():
    spec = EncoderSpec("A", dim=2, feature_space=16, seed=5, features=("word1",))
    a = feature_counts("alpha beta", spec)
    b = feature_counts("alpha gamma", spec)
    ba, bb, bg = (bucket(f"w:{w}", 5, 16) for w in ("alpha", "beta", "gamma"))
    changed = {i for i in set(a) | set(b) if a.get(i, 0) != b.get(i, 0)}
    assert changed <= {bb, bg}
    assert a.get(ba, 0) >= 1 and b.get(ba, 0) >= 1


def test_featurize_batch_matches_rows():
    spec = EncoderSpec("A", dim=2, feature_space=64, seed=1)
    texts = ["we sell data", "", "cookies are used"]
    X = featurize_batch(texts, spec).toarray()
    for row, t in zip(X, texts):
        np.testing.assert_array_equal(row, featurize(t, spec).dense())


def test_encode_matches_hand_matvec():
    rng = np.random.default_rng(0)
    spec = EncoderSpec("A", dim=3, feature_space=5, seed=2)
    Wq, Wp = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    enc = BiEncoder(spec, Wq, Wp)
    x = featurize("we sell data", spec).dense()
    expect_q = [sum(float(np.float32(Wq[r, c])) * x[c] for c in range(5)) for r in range(3)]
    np.testing.assert_allclose(encode_query("we sell data", enc), expect_q, rtol=1e-12)
    expect_p = np.asarray(Wp, dtype=np.float32).astype(float) @ x
    np.testing.assert_allclose(encode_passage("we sell data", enc), expect_p, rtol=1e-12)
    np.testing.assert_array_equal(encode_query("", enc), np.zeros(3))


def test_identity_weights_pick_column():
    spec = EncoderSpec("A", dim=4, feature_space=4, seed=2, features=("word1",))
    enc = BiEncoder(spec, np.eye(4), np.eye(4))
    j = bucket("w:solo", 2, 4)
    np.testing.assert_array_equal(encode_query("solo", enc), np.eye(4)[:, j])


def test_encoding_is_linear_in_features():
    rng = np.random.default_rng(1)
    spec = EncoderSpec("A", dim=3, feature_space=32, seed=0)
    enc = BiEncoder(spec, rng.normal(size=(3, 32)), rng.normal(size=(3, 32)))
    x = featurize("the data we keep", spec).dense()
    W = enc.W_q.astype(float)
    for alpha in (0.0, -2.5, 7.0):
        np.testing.assert_allclose(W @ (alpha * x), alpha * (W @ x))


def test_sim():
    assert sim(np.array([1.0, 0]), np.array([0, 1.0])) == 0
    v = np.array([0.6, 0.8])
    assert sim(v, v) == pytest.approx(1.0)
    assert sim(np.array([1, 2, 3]), np.array([4, 5, 6])) == 32
    with pytest.raises(ValueError):
        sim(np.ones(2), np.ones(3))


def test_nonfinite_weights_rejected():
    spec = EncoderSpec("A", dim=2, feature_space=4)
    W = np.zeros((2, 4))
    W[0, 0] = np.nan
    with pytest.raises(NumericalError):
        BiEncoder(spec, W, np.zeros((2, 4)))


def test_spec_validation():
    for kw in ({"dim": 0}, {"feature_space": 1, "dim": 2}, {"kind": "bert"}, {"features": ("word3",)}):
        with pytest.raises(ValueError):
            EncoderSpec("A", **kw)
    with pytest.raises(ValueError):
        EncoderSpec("")


# --- loss ---

def _batch():
    return [("do you sell data", "we sell data"), ("cookies used", "we use cookies"), ("delete account", "you may delete it")]


def test_zero_weights_give_log_b():
    spec = EncoderSpec("A", dim=2, feature_space=16)
    enc = BiEncoder(spec, np.zeros((2, 16)), np.zeros((2, 16)))
    for B in (2, 3):
        assert in_batch_loss(_batch()[:B], enc) == pytest.approx(math.log(B), abs=1e-15)


def test_diagonal_margin_50_gives_near_zero_loss():
    Q = np.eye(4) * math.sqrt(50)
    S = Q @ Q.T
    assert np.all(np.diag(S) - (S - np.diag(np.diag(S))) >= 50 - 1e-9)
    loss = loss_from_embeddings(Q, Q)
    assert 0 <= loss < 4 * math.exp(-50)


def test_loss_matches_extended_precision_reimplementation():
    rng = np.random.default_rng(3)
    Q, P = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    Ql, Pl = Q.astype(np.longdouble), P.astype(np.longdouble)
    total = np.longdouble(0)
    for i in range(4):
        s = [sum(Ql[i, t] * Pl[j, t] for t in range(3)) for j in range(4)]
        total -= np.log(np.exp(s[i]) / sum(np.exp(x) for x in s))
    assert loss_from_embeddings(Q, P) == pytest.approx(float(total / 4), rel=1e-12)


def test_loss_through_encoder_matches_embeddings():
    rng = np.random.default_rng(4)
    spec = EncoderSpec("A", dim=3, feature_space=64, seed=1)
    enc = BiEncoder(spec, rng.normal(size=(3, 64)), rng.normal(size=(3, 64)))
    b = _batch()
    Q = enc.encode_queries([q for q, _ in b])
    P = enc.encode_passages([p for _, p in b])
    assert in_batch_loss(b, enc) == pytest.approx(loss_from_embeddings(Q, P), rel=1e-12)


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 10_000), st.randoms())
def test_loss_nonnegative_and_permutation_invariant(B, d, seed, r):
    rng = np.random.default_rng(seed)
    Q, P = rng.normal(size=(B, d)) * 3, rng.normal(size=(B, d)) * 3
    loss = loss_from_embeddings(Q, P)
    assert loss >= 0
    perm = list(range(B))
    r.shuffle(perm)
    assert loss_from_embeddings(Q[perm], P[perm]) == pytest.approx(loss, rel=1e-12, abs=1e-15)


def test_loss_single_pair_errors():
    spec = EncoderSpec("A", dim=2, feature_space=16)
    enc = init_encoder(spec, 0)
    with pytest.raises(ValueError):
        in_batch_loss(_batch()[:1], enc)


def test_nonfinite_similarity_raises():
    Q = np.array([[np.inf, 0.0], [0.0, 1.0]])
    with pytest.raises(NumericalError):
        loss_from_embeddings(Q, np.ones((2, 2)))


def test_same_query_mask():
    assert same_query_mask(["a", "b", "c"]) is None
    m = same_query_mask(["a", "b", "a"])
    assert m.tolist() == [[False, False, True], [False, False, False], [True, False, False]]
    Q = np.array([[1.0, 0], [0, 1.0], [1.0, 0]])
    # Masked rows reduce to a 2-way softmax.
    masked = loss_from_embeddings(Q, Q, m)
    by_hand = np.mean([math.log(math.exp(1) + 1) - 1, math.log(2 + math.exp(1)) - 1 + 0, math.log(math.exp(1) + 1) - 1])
    assert masked == pytest.approx(by_hand)


# --- gradient ---

def test_gradient_matches_finite_differences_random():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        Xq, Xp, Wq, Wp, mask = random_loss_instance(rng)
        _, gq, gp = loss_and_grad(Xq, Xp, Wq, Wp, mask)
        fq = central_diff(lambda W: loss_and_grad(Xq, Xp, W, Wp, mask)[0], Wq)
        fp = central_diff(lambda W: loss_and_grad(Xq, Xp, Wq, W, mask)[0], Wp)
        worst = max(worst, rel_error(gq, fq), rel_error(gp, fp))
    assert worst <= 1e-4


def test_loss_and_gradient_accurate_when_nearly_solved():
    # Diagonal scores dominate by 30, so the loss is about 2 * exp(-30) and
    # would vanish to rounding if computed as logsumexp minus the diagonal.
    Q = np.eye(3) * 6.0
    P = np.eye(3) * 5.0
    want = math.log1p(2 * math.exp(-30.0))
    assert loss_from_embeddings(Q, P) == pytest.approx(want, rel=1e-12)
    rng = np.random.default_rng(5)
    Xq = sp.csr_matrix(np.eye(3))
    Xp = sp.csr_matrix(np.eye(3))
    Wq = Q.T + rng.normal(scale=1e-3, size=(3, 3))
    Wp = P.T + rng.normal(scale=1e-3, size=(3, 3))
    _, gq, gp = loss_and_grad(Xq, Xp, Wq, Wp)
    fq = central_diff(lambda W: loss_and_grad(Xq, Xp, W, Wp)[0], Wq)
    fp = central_diff(lambda W: loss_and_grad(Xq, Xp, Wq, W)[0], Wp)
    assert max(rel_error(gq, fq), rel_error(gp, fp)) <= 1e-4


def test_gradient_zero_encoder_identical_pairs():
    spec = EncoderSpec("A", dim=2, feature_space=8, seed=0)
    enc = BiEncoder(spec, np.zeros((2, 8)), np.zeros((2, 8)))
    batch = [("same query", "same passage")] * 3
    gq, gp = in_batch_loss_gradient(batch, enc)
    # Embeddings are zero, so every dL/dW is zero; finite differences agree.
    np.testing.assert_array_equal(gq, 0)
    np.testing.assert_array_equal(gp, 0)
    Xq = featurize_batch([q for q, _ in batch], spec)
    Xp = featurize_batch([p for _, p in batch], spec)
    fq = central_diff(lambda W: loss_and_grad(Xq, Xp, W, np.zeros((2, 8)))[0], np.zeros((2, 8)))
    np.testing.assert_allclose(fq, 0, atol=1e-10)


def test_gradient_through_text_api():
    rng = np.random.default_rng(7)
    spec = EncoderSpec("A", dim=2, feature_space=8, seed=0)
    enc = BiEncoder(spec, rng.normal(size=(2, 8)), rng.normal(size=(2, 8)))
    b = _batch()
    gq, gp = in_batch_loss_gradient(b, enc)

    def loss_q(W):
        return in_batch_loss(b, BiEncoder(spec, W.astype(np.float32), enc.W_p))

    # float32 storage limits the step here, so check with a coarse step and tolerance.
    fq = central_diff(loss_q, enc.W_q.astype(float), h=1e-2)
    assert rel_error(gq, fq) < 1e-3
    assert gp.shape == (2, 8)


def test_duplicated_batch_gradient_is_finite_and_deterministic():
    rng = np.random.default_rng(8)
    spec = EncoderSpec("A", dim=3, feature_space=32, seed=0)
    enc = BiEncoder(spec, rng.normal(size=(3, 32)), rng.normal(size=(3, 32)))
    b = _batch()
    assert in_batch_loss(b + b, enc) != in_batch_loss(b, enc)
    g1 = in_batch_loss_gradient(b + b, enc)
    g2 = in_batch_loss_gradient(b + b, enc)
    for a, c in zip(g1, g2):
        assert np.all(np.isfinite(a))
        np.testing.assert_array_equal(a, c)


# --- training ---

def _planted_pairs(n_topics=6, per=6, seed=0):
    rng = np.random.default_rng(seed)
    words = [[f"t{t}w{i}" for i in range(5)] for t in range(n_topics)]
    pairs = []
    for t in range(n_topics):
        for j in range(per):
            q = f"what about {words[t][0]} {words[t][1]} {j}"
            p = " ".join(rng.choice(words[t], 3)) + f" filler{rng.integers(50)}"
            pairs.append((q, p))
    return pairs


@pytest.mark.parametrize("seed", range(5))
def test_training_reduces_loss(seed):
    spec = EncoderSpec("A", dim=8, feature_space=256, seed=seed)
    enc = train_retriever(_planted_pairs(seed=seed), spec, RetrieverHyper(batch_size=8, epochs=10, seed=seed))
    assert len(enc.train_log) == 10
    assert enc.train_log[-1] < enc.train_log[0]


def test_training_is_deterministic_and_epochs_zero_is_init():
    spec = EncoderSpec("A", dim=4, feature_space=64, seed=1)
    h = RetrieverHyper(batch_size=4, epochs=3, seed=9)
    a = train_retriever(_planted_pairs(), spec, h)
    b = train_retriever(_planted_pairs(), spec, h)
    np.testing.assert_array_equal(a.W_q, b.W_q)
    np.testing.assert_array_equal(a.W_p, b.W_p)
    z = train_retriever(_planted_pairs(), spec, RetrieverHyper(batch_size=4, epochs=0, seed=9))
    init = init_encoder(spec, 9)
    np.testing.assert_array_equal(z.W_q, init.W_q)
    bound = 1 / math.sqrt(64)
    assert np.abs(init.W_q).max() <= bound


def test_training_needs_enough_positives(tiny_qa):
    spec = EncoderSpec("A", dim=4, feature_space=64)
    with pytest.raises(ValueError, match="smaller batch"):
        train_retriever(tiny_qa, spec, RetrieverHyper(batch_size=16))
    enc = train_retriever(tiny_qa, spec, RetrieverHyper(batch_size=4, epochs=2))
    assert len(enc.train_log) == 2


# --- files ---

def test_encoder_round_trip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(5)
    spec = EncoderSpec("B", dim=3, feature_space=16, seed=77, features=("word1", "char3"))
    enc = BiEncoder(spec, rng.normal(size=(3, 16)), rng.normal(size=(3, 16)), [1.5, 1.2])
    save_encoder(enc, tmp_path / "e.bin")
    back = load_encoder(tmp_path / "e.bin")
    assert back.spec == spec and back.train_log == [1.5, 1.2]
    np.testing.assert_array_equal(back.W_q, enc.W_q)
    save_encoder(back, tmp_path / "f.bin")
    assert (tmp_path / "e.bin").read_bytes() == (tmp_path / "f.bin").read_bytes()


def test_precomputed_lookup_and_round_trip(tmp_path):
    p = tmp_path / "emb.jsonl"
    write_jsonl(p, [{"id": "q1", "vector": [1, 0]}, {"id": 42, "vector": [0.5, 0.5]}, {"id": "7", "role": "passage", "vector": [0, 1]}])
    enc = load_precomputed(p, "P")
    np.testing.assert_array_equal(encode_query("ignored", enc, "q1"), [1, 0])
    np.testing.assert_array_equal(enc.encode_passages(["x", "y"], [42, 7]), [[0.5, 0.5], [0, 1]])
    with pytest.raises(DataError, match="99"):
        enc.encode_passages(["x"], [99])
    with pytest.raises(DataError):
        enc.encode_queries(["x"])
    save_encoder(enc, tmp_path / "p.bin")
    back = load_encoder(tmp_path / "p.bin")
    np.testing.assert_array_equal(back.passages[42], enc.passages[42])


def test_precomputed_errors(tmp_path):
    p = tmp_path / "emb.jsonl"
    write_jsonl(p, [{"id": "q1", "vector": [1, 0]}, {"id": 4, "vector": [1, 0, 0]}])
    with pytest.raises(DataError, match="dimension"):
        load_precomputed(p, "P")
    write_jsonl(p, [{"id": "q1"}])
    with pytest.raises(DataError, match=":1"):
        load_precomputed(p, "P")
