"""Preset x seed experiment grid: train retrievers and oracles, augment,
train the final QA model, and evaluate on the held-out split."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .classifier import PairClassifier, classify_pairs, train_pair_classifier
from .config import PipelineConfig, derive_seed
from .corpus import Corpus, QADataset, load_qa_dataset, read_corpus, write_qa_dataset
from .encoder import PRECOMPUTED, load_precomputed, train_retriever
from .errors import EnsaugError
from .evaluation import MACRO, MICRO, Metrics, Summary, category_shares, evaluate, evaluate_by_category
from .index import build_index, retrieve_all, save_index, write_retrievals
from .io import digest_obj, sha256_file, write_json
from .pipeline import Preset, SpecArtifacts, resolve_preset, run_augmentation
from .analytics import OverlapStats, corpus_bleu, overlap_stats

logger = logging.getLogger(__name__)


@dataclass
class Inputs:
    corpus: Corpus
    train: QADataset
    test: QADataset

    def sentence_text(self, sid: int) -> str:
        return self.corpus.text(sid)


def load_inputs(cfg: PipelineConfig) -> Inputs:
    cfg.check_paths()
    corpus = read_corpus(cfg.corpus)
    return Inputs(corpus, load_qa_dataset(cfg.train_qa, corpus), load_qa_dataset(cfg.test_qa, corpus))


def _encoder_for(cfg: PipelineConfig, spec_id: str, data: QADataset, seed: int, stage: str):
    sc = cfg.spec_config(spec_id)
    if sc.spec.kind == PRECOMPUTED:
        return load_precomputed(sc.embeddings, spec_id)
    hyper = sc.retriever
    if stage == "final" and cfg.final_retriever is not None:
        hyper = cfg.final_retriever
    return train_retriever(data, sc.spec, replace(hyper, seed=derive_seed(seed, stage + "-retriever", spec_id)))


def train_spec_artifacts(cfg: PipelineConfig, spec_id: str, inputs: Inputs, seed: int, depth: int) -> SpecArtifacts:
    """Retriever and oracle on the gold training split, index, and depth-k retrievals."""
    enc = _encoder_for(cfg, spec_id, inputs.train, seed, "aug")
    oracle = train_pair_classifier(inputs.train, enc, replace(cfg.oracle, seed=derive_seed(seed, "oracle", spec_id)))
    index = build_index(inputs.corpus, enc)
    raw = retrieve_all(index, inputs.train, enc, depth)
    return SpecArtifacts(spec_id, enc, oracle, index, raw)


def gold_class_weight(gold: QADataset) -> float:
    st = gold.stats()
    if not st["positives"] or not st["negatives"]:
        raise EnsaugError("gold split needs both classes")
    return st["negatives"] / st["positives"]


def train_final_model(cfg: PipelineConfig, t: QADataset, seed: int, gold: QADataset | None = None):
    """Final QA model: the final spec's encoder retrained on T's positives, then a pair classifier on T.

    With ``final.class_weight = gold`` the classifier's positive weight is
    the gold split's negative/positive ratio rather than T's.
    """
    spec_id = cfg.final_spec_id
    enc = _encoder_for(cfg, spec_id, t, seed, "final")
    hyper = replace(cfg.final, seed=derive_seed(seed, "final-classifier", spec_id))
    if cfg.final_weight_from_gold:
        hyper = replace(hyper, class_weight=gold_class_weight(gold if gold is not None else t))
    clf = train_pair_classifier(t, enc, hyper)
    return enc, clf


def predict(clf: PairClassifier, enc, dataset: QADataset) -> set[tuple[str, int]]:
    labels = classify_pairs(clf, dataset.pairs, enc)
    return {p.key for p, z in zip(dataset.pairs, labels) if z == 1}


@dataclass
class CellResult:
    preset: str
    k: int
    seed: int
    metrics: Metrics | None = None
    by_category: dict[str, Metrics] = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    t_digest: str = ""
    error: str | None = None


@dataclass
class ExperimentReport:
    presets: list[str]
    sweep_presets: list[str]
    ks: list[int]
    default_k: int
    seeds: list[int]
    cells: list[CellResult]
    shares: dict[str, float]
    overlap_raw: dict[int, OverlapStats]
    overlap_filtered: dict[int, OverlapStats]
    bleu: dict[int, dict[tuple[str, str], float]]
    averaging: str
    config_digest: str
    manifest: dict = field(default_factory=dict)

    def cell_results(self, preset: str, k: int) -> list[CellResult]:
        return [c for c in self.cells if c.preset == preset and c.k == k]

    def summary(self, preset: str, k: int | None = None) -> dict[str, Summary] | None:
        k = self.default_k if k is None else k
        runs = [c.metrics for c in self.cell_results(preset, k) if c.metrics is not None]
        if not runs:
            return None
        return {
            "precision": Summary.of([m.precision for m in runs]),
            "recall": Summary.of([m.recall for m in runs]),
            "f1": Summary.of([m.f1 for m in runs]),
        }

    def category_f1(self, preset: str, k: int | None = None) -> dict[str, Summary]:
        k = self.default_k if k is None else k
        cells = [c for c in self.cell_results(preset, k) if c.metrics is not None]
        cats: dict[str, list[float]] = {}
        for c in cells:
            for cat, m in c.by_category.items():
                cats.setdefault(cat, []).append(m.f1)
        return {cat: Summary.of(v) for cat, v in cats.items()}

    def category_correct(self, preset: str, k: int | None = None) -> dict[str, Summary]:
        k = self.default_k if k is None else k
        cells = [c for c in self.cell_results(preset, k) if c.metrics is not None]
        cats: dict[str, list[float]] = {}
        for c in cells:
            for cat, m in c.by_category.items():
                cats.setdefault(cat, []).append(m.correct)
        return {cat: Summary.of(v) for cat, v in cats.items()}

    def errors(self) -> list[CellResult]:
        return [c for c in self.cells if c.error]


def sweep_presets_for(spec_ids: Sequence[str]) -> list[str]:
    out = []
    for s in spec_ids:
        out += [f"single:{s}:no-oracle", f"single:{s}"]
    return out


def run_experiment(
    cfg: PipelineConfig,
    presets: Sequence[str] | None = None,
    seeds: Sequence[int] | None = None,
    sweep: Sequence[int] | None = None,
    out_dir: str | Path | None = None,
    inputs: Inputs | None = None,
) -> ExperimentReport:
    """Run every preset at the default k, plus single-retriever rows at each sweep depth.

    Retrievers, oracles and indexes are trained once per seed and shared by
    all cells; retrieval runs once at the deepest k and shallower depths are
    prefixes.  Identical training sets reuse one final-model fit.  With
    ``out_dir`` set, indexes, retrieval sets, training sets, report tables
    and a manifest of file digests are written there.
    """
    presets = list(presets if presets is not None else cfg.presets)
    seeds = list(seeds if seeds is not None else cfg.seeds)
    sweep = sorted(set(sweep if sweep is not None else cfg.topk_sweep))
    inputs = inputs or load_inputs(cfg)
    spec_ids = cfg.spec_ids
    resolved: dict[str, Preset] = {name: resolve_preset(name, spec_ids, cfg.domain_specs) for name in presets}
    sweep_names = sweep_presets_for(spec_ids) if sweep else []
    for name in sweep_names:
        resolved.setdefault(name, resolve_preset(name, spec_ids, cfg.domain_specs))
    ks = sorted(set([cfg.k] + list(sweep)))
    depth = max(ks)
    averaging = MACRO if cfg.macro else MICRO
    out = Path(out_dir) if out_dir is not None else None
    written: dict[str, str] = {}

    def record(path: Path) -> None:
        written[str(path.relative_to(out))] = sha256_file(path)

    plan: list[tuple[str, int]] = [(p, cfg.k) for p in presets]
    for k in sweep:
        plan += [(p, k) for p in sweep_names if (p, k) not in plan]

    cells: list[CellResult] = []
    overlap_raw: dict[int, OverlapStats] = {}
    overlap_filtered: dict[int, OverlapStats] = {}
    bleu: dict[int, dict[tuple[str, str], float]] = {}
    for seed in seeds:
        logger.info("seed %d: training %d retrievers and oracles", seed, len(spec_ids))
        artifacts = {s: train_spec_artifacts(cfg, s, inputs, seed, depth) for s in spec_ids}
        if out is not None:
            for s, art in artifacts.items():
                p = out / f"seed-{seed}" / "index" / f"{s}.bin"
                save_index(art.index, p)
                record(p)
                p = out / f"seed-{seed}" / "retrievals" / f"{s}.raw.l"
                write_retrievals(art.raw, p)
                record(p)
        fitted: dict[str, tuple[Metrics, dict[str, Metrics]]] = {}
        for name, k in plan:
            preset = resolved[name]
            cell = CellResult(name, k, seed)
            try:
                run = run_augmentation(preset, inputs.train, artifacts, inputs.sentence_text, k)
                cell.counts = run.counts()
                records = [p.to_record() for p in run.t.pairs]
                cell.t_digest = digest_obj(records)
                if out is not None:
                    p = out / f"seed-{seed}" / "train" / f"{name.replace(':', '_')}.k{k}.l"
                    write_qa_dataset(run.t, p)
                    record(p)
                if cell.t_digest not in fitted:
                    enc, clf = train_final_model(cfg, run.t, seed, inputs.train)
                    preds = predict(clf, enc, inputs.test)
                    fitted[cell.t_digest] = (
                        evaluate(preds, inputs.test, averaging),
                        evaluate_by_category(preds, inputs.test, average=averaging),
                    )
                cell.metrics, cell.by_category = fitted[cell.t_digest]
            except (EnsaugError, ValueError, ArithmeticError) as exc:
                logger.error("cell %s k=%d seed=%d failed: %s", name, k, seed, exc)
                cell.error = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
        if seed == seeds[0] and len(spec_ids) >= 2:
            for k in ks:
                raws = [artifacts[s].raw.truncate(k) for s in spec_ids]
                overlap_raw[k] = overlap_stats(raws, spec_ids)
                if all(k in artifacts[s].filtered for s in spec_ids):
                    overlap_filtered[k] = overlap_stats([artifacts[s].filtered[k] for s in spec_ids], spec_ids)
                texts = {s: [inputs.sentence_text(sid) for sid in sorted({e.sentence_id for e in r.entries})] for s, r in zip(spec_ids, raws)}
                bleu[k] = {(a, b): corpus_bleu(texts[a], texts[b]) for a in spec_ids for b in spec_ids if a != b and texts[a] and texts[b]}

    report = ExperimentReport(
        presets=presets,
        sweep_presets=sweep_names,
        ks=ks,
        default_k=cfg.k,
        seeds=seeds,
        cells=cells,
        shares=category_shares(inputs.test),
        overlap_raw=overlap_raw,
        overlap_filtered=overlap_filtered,
        bleu=bleu,
        averaging=averaging,
        config_digest=cfg.digest(),
    )
    if out is not None:
        from .report import write_report

        for path in write_report(report, out / "report"):
            record(path)
        report.manifest = {
            "config_digest": report.config_digest,
            "inputs": {name: sha256_file(getattr(cfg, name)) for name in ("corpus", "train_qa", "test_qa")},
            "seeds": seeds,
            "stage_seeds": {str(s): {sid: derive_seed(s, "aug-retriever", sid) for sid in spec_ids} for s in seeds},
            "cells": [
                {"preset": c.preset, "k": c.k, "seed": c.seed, "t_digest": c.t_digest, "counts": c.counts, "error": c.error}
                for c in cells
            ],
            "files": dict(sorted(written.items())),
        }
        report.manifest["digest"] = digest_obj(report.manifest)
        write_json(out / "manifest.json", report.manifest)
    return report
