"""Flat ``key = value`` run configuration and per-stage seed derivation.

Example::

    corpus = corpus.l
    train_qa = train.jsonl
    test_qa = test.jsonl
    out_dir = out
    specs = A,B,C
    final_spec = C
    spec.A.hash_seed = 11
    spec.B.domain = true
    oracle.epochs = 300
    final.class_weight = gold

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .classifier import ClassifierHyper
from .encoder import PRECOMPUTED, REFERENCE, EncoderSpec, RetrieverHyper
from .errors import DataError
from .index import DEFAULT_K
from .io import digest_obj

DEFAULT_PRESETS = ("baseline", "era", "era-d", "baseline-e")
DEFAULT_SWEEP = (10, 50, 100)


def derive_seed(global_seed: int, stage: str, spec_id: str = "") -> int:
    """Stable 63-bit seed from (global seed, stage, spec)."""
    h = hashlib.blake2b(f"{global_seed}|{stage}|{spec_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


@dataclass(frozen=True)
class SpecConfig:
    spec: EncoderSpec
    retriever: RetrieverHyper = RetrieverHyper()
    domain: bool = False
    embeddings: str | None = None   # precomputed kind only


@dataclass(frozen=True)
class PipelineConfig:
    corpus: str | None = None
    train_qa: str | None = None
    test_qa: str | None = None
    out_dir: str = "out"
    specs: tuple[SpecConfig, ...] = ()
    final_spec: str | None = None
    k: int = DEFAULT_K
    topk_sweep: tuple[int, ...] = DEFAULT_SWEEP
    oracle: ClassifierHyper = ClassifierHyper()
    final: ClassifierHyper = ClassifierHyper()
    final_retriever: RetrieverHyper | None = None
    # Final model's positive-class weight taken from the gold split, so every preset trains with the same weight.
    final_weight_from_gold: bool = False
    presets: tuple[str, ...] = DEFAULT_PRESETS
    seeds: tuple[int, ...] = (1,)
    seed: int = 13
    macro: bool = False
    raw: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        ids = [s.spec.spec_id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"spec ids must be unique: {ids}")
        if self.k < 1 or any(k < 1 for k in self.topk_sweep):
            raise ValueError("k must be >= 1")
        if self.final_spec is not None and self.final_spec not in ids:
            raise ValueError(f"final_spec {self.final_spec!r} is not a declared spec")

    @property
    def spec_ids(self) -> list[str]:
        return [s.spec.spec_id for s in self.specs]

    @property
    def domain_specs(self) -> list[str]:
        return [s.spec.spec_id for s in self.specs if s.domain]

    def spec_config(self, spec_id: str) -> SpecConfig:
        for s in self.specs:
            if s.spec.spec_id == spec_id:
                return s
        raise KeyError(spec_id)

    @property
    def final_spec_id(self) -> str:
        if self.final_spec:
            return self.final_spec
        if not self.specs:
            raise ValueError("no specs declared")
        return self.specs[-1].spec.spec_id

    def digest(self) -> str:
        """Digest of every setting except paths' location on disk."""
        d = {k: v for k, v in sorted(self.raw.items()) if k not in ("out_dir",)}
        return digest_obj(d)

    def check_paths(self) -> None:
        for name in ("corpus", "train_qa", "test_qa"):
            p = getattr(self, name)
            if p is None:
                raise DataError(f"config: {name} is required")
            if not Path(p).is_file():
                raise DataError(f"config: {name} file {p} does not exist")
        for s in self.specs:
            if s.spec.kind == PRECOMPUTED and not (s.embeddings and Path(s.embeddings).is_file()):
                raise DataError(f"config: spec {s.spec.spec_id} needs an existing embeddings file")


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _names(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _hyper(cls, defaults, items: Mapping[str, str], where: str):
    types = {f.name: f.type for f in fields(cls)}
    kw: dict[str, Any] = {}
    for key, val in items.items():
        if key not in types:
            raise ValueError(f"{where}: unknown key {key!r}")
        t = str(types[key])
        if "bool" in t:
            kw[key] = _bool(val)
        elif "float" in t:
            kw[key] = None if val.strip().lower() in ("none", "auto") else float(val)
        else:
            kw[key] = int(val)
    return replace(defaults, **kw)


def parse_config_text(text: str, base_dir: str | Path = ".") -> PipelineConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, val = (x.strip() for x in s.split("=", 1))
        if key in raw:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        raw[key] = val
    return config_from_mapping(raw, base_dir)


def config_from_mapping(raw: Mapping[str, str], base_dir: str | Path = ".") -> PipelineConfig:
    base = Path(base_dir)

    def path(v: str | None) -> str | None:
        if v is None:
            return None
        p = Path(v)
        return str(p if p.is_absolute() else base / p)

    groups: dict[str, dict[str, str]] = {}
    top: dict[str, str] = {}
    for key, val in raw.items():
        if "." in key:
            head, rest = key.split(".", 1)
            if head == "spec":
                sid, _, sub = rest.partition(".")
                groups.setdefault(f"spec.{sid}", {})[sub] = val
            else:
                groups.setdefault(head, {})[rest] = val
        else:
            top[key] = val

    spec_ids = _names(top.get("specs", ""))
    declared = {g[len("spec."):] for g in groups if g.startswith("spec.")}
    undeclared = declared - set(spec_ids)
    if undeclared:
        raise ValueError(f"settings for undeclared specs: {sorted(undeclared)}")
    specs = []
    for i, sid in enumerate(spec_ids):
        opts = dict(groups.get(f"spec.{sid}", {}))
        kind = opts.pop("kind", REFERENCE)
        enc_kw = {}
        for name, conv in (("dim", int), ("feature_space", int), ("hash_seed", int)):
            if name in opts:
                enc_kw["seed" if name == "hash_seed" else name] = conv(opts.pop(name))
        enc_kw.setdefault("seed", 1000 + i)
        if "features" in opts:
            enc_kw["features"] = _names(opts.pop("features"))
        domain = _bool(opts.pop("domain", "false"))
        embeddings = path(opts.pop("embeddings", None))
        retr = _hyper(RetrieverHyper, RetrieverHyper(), opts, f"spec.{sid}")
        if kind == PRECOMPUTED:
            enc_kw.setdefault("feature_space", enc_kw.get("dim", 32))
        specs.append(SpecConfig(EncoderSpec(sid, kind=kind, **enc_kw), retr, domain, embeddings))

    known_top = {"corpus", "train_qa", "test_qa", "out_dir", "specs", "final_spec", "k", "topk_sweep", "presets", "seeds", "seed", "macro"}
    unknown = set(top) - known_top
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for g in groups:
        if not g.startswith("spec.") and g not in ("oracle", "final", "final_retriever"):
            raise ValueError(f"unknown config group {g!r}")
    final_opts = dict(groups.get("final", {}))
    weight_from_gold = final_opts.get("class_weight", "").strip().lower() == "gold"
    if weight_from_gold:
        del final_opts["class_weight"]

    return PipelineConfig(
        corpus=path(top.get("corpus")),
        train_qa=path(top.get("train_qa")),
        test_qa=path(top.get("test_qa")),
        out_dir=path(top.get("out_dir", "out")) or "out",
        specs=tuple(specs),
        final_spec=top.get("final_spec"),
        k=int(top.get("k", DEFAULT_K)),
        topk_sweep=_ints(top["topk_sweep"]) if "topk_sweep" in top else DEFAULT_SWEEP,
        oracle=_hyper(ClassifierHyper, ClassifierHyper(), groups.get("oracle", {}), "oracle"),
        final=_hyper(ClassifierHyper, ClassifierHyper(), final_opts, "final"),
        final_weight_from_gold=weight_from_gold,
        final_retriever=_hyper(RetrieverHyper, RetrieverHyper(), groups["final_retriever"], "final_retriever") if "final_retriever" in groups else None,
        presets=_names(top["presets"]) if "presets" in top else DEFAULT_PRESETS,
        seeds=_ints(top["seeds"]) if "seeds" in top else (1,),
        seed=int(top.get("seed", 13)),
        macro=_bool(top.get("macro", "false")),
        raw=dict(raw),
    )


def load_config(path: str | Path) -> PipelineConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{p}: cannot read config") from exc
    try:
        return parse_config_text(text, p.parent)
    except ValueError as exc:
        raise DataError(f"{p}: {exc}") from exc


def render_config(raw: Mapping[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in raw.items())

