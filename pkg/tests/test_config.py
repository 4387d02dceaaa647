from __future__ import annotations

import pytest

from ensaug.config import derive_seed, load_config, parse_config_text, render_config
from ensaug.encoder import PRECOMPUTED
from ensaug.errors import DataError

BASE = """
corpus = corpus.l
train_qa = train.jsonl
test_qa = test.jsonl
specs = A,B
spec.A.features = word1,word2
spec.A.hash_seed = 11
spec.A.epochs = 4
spec.B.domain = true
spec.B.dim = 16
oracle.threshold = 0.9
final.class_weight = gold
k = 25
topk_sweep = 10,25
seeds = 1,2
"""


def test_parse_full_config(tmp_path):
    cfg = parse_config_text(BASE, tmp_path)
    assert cfg.corpus == str(tmp_path / "corpus.l")
    assert cfg.spec_ids == ["A", "B"] and cfg.domain_specs == ["B"]
    a = cfg.spec_config("A")
    assert a.spec.features == ("word1", "word2") and a.spec.seed == 11 and a.retriever.epochs == 4
    assert cfg.spec_config("B").spec.dim == 16 and cfg.spec_config("B").spec.seed == 1001
    assert cfg.oracle.threshold == 0.9
    assert cfg.final_weight_from_gold and cfg.final.class_weight is None
    assert (cfg.k, cfg.topk_sweep, cfg.seeds) == (25, (10, 25), (1, 2))
    assert cfg.final_spec_id == "B"


def test_defaults():
    cfg = parse_config_text("specs = A")
    assert cfg.k == 10
    assert cfg.presets == ("baseline", "era", "era-d", "baseline-e")
    assert cfg.topk_sweep == (10, 50, 100)
    assert cfg.oracle.threshold == 0.5 and cfg.oracle.class_weight is None
    assert not cfg.final_weight_from_gold


def test_numeric_class_weight_kept():
    cfg = parse_config_text("specs = A\nfinal.class_weight = 3.5\noracle.class_weight = auto")
    assert cfg.final.class_weight == 3.5 and not cfg.final_weight_from_gold
    assert cfg.oracle.class_weight is None


def test_digest_ignores_out_dir_and_comments():
    a = parse_config_text(BASE + "out_dir = x\n")
    b = parse_config_text("# comment\n" + BASE + "out_dir = y  # trailing\n")
    assert a.digest() == b.digest()
    assert a.digest() != parse_config_text(BASE.replace("k = 25", "k = 30")).digest()


@pytest.mark.parametrize(
    "text,match",
    [
        ("specs = A\nspecs = B", "duplicate"),
        ("specs = A\nnonsense", "key = value"),
        ("specs = A\nbogus = 1", "unknown config keys"),
        ("specs = A\nspec.Z.dim = 3", "undeclared"),
        ("specs = A,A", "unique"),
        ("specs = A\nk = 0", "k must be"),
        ("specs = A\nfinal_spec = Q", "final_spec"),
        ("specs = A\noracle.nope = 1", "unknown key"),
        ("specs = A\nwidget.x = 1", "unknown config group"),
        ("specs = A\nspec.A.domain = maybe", "boolean"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ValueError, match=match):
        parse_config_text(text)


def test_load_config_maps_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("specs = A\nk = 0\n")
    with pytest.raises(DataError, match="c.cfg"):
        load_config(p)
    with pytest.raises(DataError):
        load_config(tmp_path / "absent.cfg")


def test_check_paths(tmp_path):
    cfg = parse_config_text(BASE, tmp_path)
    with pytest.raises(DataError, match="corpus"):
        cfg.check_paths()
    for name in ("corpus.l", "train.jsonl", "test.jsonl"):
        (tmp_path / name).write_text("")
    cfg.check_paths()
    cfg2 = parse_config_text("corpus = corpus.l\ntrain_qa = train.jsonl\ntest_qa = test.jsonl\nspecs = P\nspec.P.kind = precomputed\nspec.P.embeddings = e.jsonl", tmp_path)
    assert cfg2.specs[0].spec.kind == PRECOMPUTED
    with pytest.raises(DataError, match="embeddings"):
        cfg2.check_paths()


def test_render_round_trip():
    cfg = parse_config_text(BASE)
    again = parse_config_text(render_config(cfg.raw))
    assert again.digest() == cfg.digest()


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, "oracle", "A") == derive_seed(1, "oracle", "A")
    seen = {derive_seed(g, s, i) for g in (1, 2) for s in ("aug-retriever", "oracle") for i in ("A", "B")}
    assert len(seen) == 8
    assert 0 <= derive_seed(5, "x") < 2**63
