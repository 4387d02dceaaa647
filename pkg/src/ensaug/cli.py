"""``ensaug`` command-line entry point.

Every stage reads and writes files only.  Each output gets a sidecar
``<output>.run.json`` recording the command, the digest of the settings
that produced it, and the digests of its inputs and outputs.  Exit codes:
0 success, 1 usage error, 2 data or schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .analytics import overlap_stats, render_overlap
from .classifier import ClassifierHyper, classify_pairs, load_classifier, save_classifier, score_pairs, train_pair_classifier
from .config import derive_seed, load_config
from .corpus import ingest_corpus, load_qa_dataset, read_categories, read_corpus, write_corpus, write_qa_dataset
from .encoder import FEATURE_KINDS, PRECOMPUTED, EncoderSpec, RetrieverHyper, load_encoder, load_precomputed, save_encoder, train_retriever
from .errors import DataError, NumericalError
from .evaluation import MACRO, MICRO, evaluate, evaluate_by_category
from .experiment import load_inputs, run_experiment, train_spec_artifacts
from .index import DEFAULT_K, build_index, load_index, read_retrievals, retrieve_all, save_index, write_retrievals
from .io import digest_obj, iter_jsonl, sha256_file, write_json, write_jsonl
from .pipeline import aggregate, build_training_set, filter_retrievals, resolve_preset, run_augmentation

logger = logging.getLogger("ensaug")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _probability(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {v}")
    return v


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _name_list(text: str) -> list[str]:
    vals = [x.strip() for x in text.split(",") if x.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# --- bookkeeping ---

def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".run.json")


def _file_digests(paths: dict[str, Any]) -> dict[str, str]:
    out = {}
    for name, p in sorted(paths.items()):
        if p is None:
            continue
        for i, q in enumerate(p if isinstance(p, (list, tuple)) else [p]):
            out[name if not isinstance(p, (list, tuple)) else f"{name}[{i}]"] = sha256_file(q)
    return out


def record_run(command: str, settings: dict, inputs: dict[str, Any], outputs: Sequence[str | Path], counts: dict | None = None, config_digest: str | None = None) -> dict:
    """Write a sidecar for every output and return the shared run record."""
    record = {
        "command": command,
        "version": __version__,
        "config_digest": config_digest or digest_obj(settings),
        "settings": settings,
        "inputs": _file_digests(inputs),
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        "counts": counts or {},
    }
    record["digest"] = digest_obj(record)
    for p in outputs:
        write_json(sidecar_path(p), record)
    return record


def _read_sidecar(path: str | Path) -> dict:
    p = sidecar_path(path)
    if not p.exists():
        return {}
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: unreadable run record") from exc


class Summary:
    """Collects the key-value summary printed on stdout and optionally written as JSONL."""

    def __init__(self, command: str):
        self.items: dict[str, Any] = {"command": command}

    def add(self, **kw: Any) -> None:
        self.items.update(kw)

    def line(self) -> str:
        parts = []
        for k, v in self.items.items():
            if isinstance(v, float):
                v = f"{v:.6g}"
            elif isinstance(v, (dict, list)):
                continue
            parts.append(f"{k}={v}")
        return " ".join(parts)

    def write(self, path: str | Path) -> None:
        write_jsonl(path, ({"key": k, "value": v} for k, v in self.items.items()))


def _load_encoder_arg(path: str, spec_id: str | None = None):
    """Binary encoder file, or a precomputed-embedding JSONL file (needs a spec id)."""
    p = Path(path)
    if p.suffix in (".l", ".jsonl"):
        return load_precomputed(p, spec_id or p.stem)
    return load_encoder(p)


# --- commands ---

def cmd_ingest(args, summary: Summary) -> None:
    paths = sorted({p for pattern in args.docs for p in (glob.glob(pattern) if glob.has_magic(pattern) else [pattern])})
    if not paths:
        raise DataError(f"no document files match {args.docs}")
    corpus = ingest_corpus(paths, workers=args.workers)
    write_corpus(corpus, args.out)
    rec = record_run("ingest", {"workers": args.workers}, {"docs": paths}, [args.out], {"sentences": corpus.size, "collisions": len(corpus.collisions)})
    summary.add(sentences=corpus.size, documents=len(corpus.doc_lengths()), collisions=len(corpus.collisions), digest=rec["outputs"][Path(args.out).name][:16])


def cmd_stats(args, summary: Summary) -> None:
    corpus = read_corpus(args.corpus) if args.corpus else None
    if corpus is not None:
        lengths = corpus.doc_lengths()
        summary.add(sentences=corpus.size, documents=len(lengths))
    if args.qa:
        ds = load_qa_dataset(args.qa, corpus)
        st = ds.stats()
        summary.add(**{k: (round(v, 6) if isinstance(v, float) else v) for k, v in st.items()})
        cats: dict[str, int] = {}
        for c in ds.category_of().values():
            cats[c] = cats.get(c, 0) + 1
        summary.add(categories=cats)
    if corpus is None and not args.qa:
        raise UsageError("stats needs --corpus and/or --qa")


def _spec_from_args(args) -> tuple[EncoderSpec, RetrieverHyper, str | None, str | None]:
    """Encoder spec and hypers from --config/--spec, with command-line overrides."""
    if args.config:
        cfg = load_config(args.config)
        try:
            sc = cfg.spec_config(args.spec)
        except KeyError:
            raise DataError(f"{args.config}: spec {args.spec!r} is not declared (have {cfg.spec_ids})") from None
        spec, hyper, emb, digest = sc.spec, sc.retriever, sc.embeddings, cfg.digest()
    else:
        spec, hyper, emb, digest = EncoderSpec(args.spec), RetrieverHyper(), None, None
    spec_kw = {k: v for k, v in (("dim", args.dim), ("feature_space", args.feature_space), ("seed", args.hash_seed)) if v is not None}
    if args.features:
        spec_kw["features"] = tuple(args.features)
    if spec_kw:
        spec = replace(spec, **spec_kw)
    hyp_kw = {k: v for k, v in (("batch_size", args.batch_size), ("learning_rate", args.learning_rate), ("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    if hyp_kw:
        hyper = replace(hyper, **hyp_kw)
    return spec, hyper, emb, digest


def cmd_train_retriever(args, summary: Summary) -> None:
    spec, hyper, embeddings, cfg_digest = _spec_from_args(args)
    if spec.kind == PRECOMPUTED:
        if not embeddings:
            raise DataError(f"spec {spec.spec_id}: precomputed kind needs an embeddings file")
        enc = load_precomputed(embeddings, spec.spec_id)
        inputs = {"embeddings": embeddings}
    else:
        data = load_qa_dataset(args.qa, read_corpus(args.corpus) if args.corpus else None)
        enc = train_retriever(data, spec, hyper)
        inputs = {"qa": args.qa, "corpus": args.corpus}
    save_encoder(enc, args.out)
    settings = {"spec": spec.header(), "hyper": hyper.__dict__}
    log = getattr(enc, "train_log", ())
    rec = record_run("train-retriever", settings, inputs, [args.out], {"epochs": len(log)}, cfg_digest)
    summary.add(spec_id=spec.spec_id, kind=spec.kind, d=spec.dim, V=spec.feature_space, final_loss=(log[-1] if log else float("nan")), digest=rec["outputs"][Path(args.out).name][:16])


def cmd_build_index(args, summary: Summary) -> None:
    corpus = read_corpus(args.corpus)
    enc = _load_encoder_arg(args.enc)
    index = build_index(corpus, enc)
    save_index(index, args.out)
    rec = record_run("build-index", {"spec_id": index.spec_id, "enc": str(args.enc)}, {"corpus": args.corpus, "enc": args.enc}, [args.out], {"M": index.size, "d": index.dim})
    summary.add(spec_id=index.spec_id, M=index.size, d=index.dim, digest=rec["outputs"][Path(args.out).name][:16])


def cmd_retrieve(args, summary: Summary) -> None:
    index = load_index(args.idx)
    enc_path = args.enc or _read_sidecar(args.idx).get("settings", {}).get("enc")
    if not enc_path:
        raise DataError(f"{args.idx}: no --enc given and the index's run record names no encoder")
    enc = _load_encoder_arg(enc_path, index.spec_id)
    data = load_qa_dataset(args.qa, read_corpus(args.corpus) if args.corpus else None)
    rs = retrieve_all(index, data, enc, args.k, partitions=args.partitions)
    write_retrievals(rs, args.out)
    rec = record_run("retrieve", {"k": args.k, "spec_id": rs.spec_id}, {"idx": args.idx, "enc": enc_path, "qa": args.qa}, [args.out], {"queries": len(rs.query_ids()), "entries": len(rs)})
    summary.add(spec_id=rs.spec_id, k=args.k, queries=len(rs.query_ids()), entries=len(rs), digest=rec["outputs"][Path(args.out).name][:16])


def _classifier_hyper(args) -> ClassifierHyper:
    kw = {k: getattr(args, k) for k in ("learning_rate", "epochs", "l2", "class_weight", "threshold", "seed") if getattr(args, k) is not None}
    return replace(ClassifierHyper(), **kw)


def _train_classifier(command: str, args, summary: Summary) -> None:
    enc = _load_encoder_arg(args.enc)
    data = load_qa_dataset(args.qa, read_corpus(args.corpus) if args.corpus else None)
    hyper = _classifier_hyper(args)
    clf = train_pair_classifier(data, enc, hyper)
    save_classifier(clf, args.out)
    rec = record_run(command, {"hyper": hyper.__dict__, "spec_id": clf.spec_id}, {"qa": args.qa, "enc": args.enc}, [args.out], {"pairs": data.m})
    train_acc = float((classify_pairs(clf, data.pairs, enc) == [p.label for p in data.pairs]).mean())
    summary.add(spec_id=clf.spec_id, pairs=data.m, threshold=clf.threshold, class_weight=clf.class_weight, final_loss=clf.train_log[-1] if clf.train_log else float("nan"), train_accuracy=train_acc, digest=rec["outputs"][Path(args.out).name][:16])


def cmd_train_oracle(args, summary: Summary) -> None:
    _train_classifier("train-oracle", args, summary)


def cmd_train_qa(args, summary: Summary) -> None:
    _train_classifier("train-qa", args, summary)


def cmd_filter(args, summary: Summary) -> None:
    rl = read_retrievals(args.retrievals)
    oracle = load_classifier(args.oracle)
    enc = _load_encoder_arg(args.enc, oracle.spec_id)
    corpus = read_corpus(args.corpus)
    data = load_qa_dataset(args.qa, corpus)
    query_texts = {q: t for q, (t, _) in data.query_index.items()}
    if args.threshold is not None:
        oracle = oracle.with_threshold(args.threshold)
    out = filter_retrievals(rl, oracle, enc, query_texts, corpus.text, common_oracle=args.common_oracle)
    write_retrievals(out, args.out)
    counts = {"retrieved": len(rl), "kept": len(out), "filtered_out": len(rl) - len(out)}
    rec = record_run("filter", {"threshold": oracle.threshold, "common_oracle": args.common_oracle}, {"retrievals": args.retrievals, "oracle": args.oracle, "enc": args.enc, "qa": args.qa, "corpus": args.corpus}, [args.out], counts)
    summary.add(spec_id=out.spec_id, **counts, digest=rec["outputs"][Path(args.out).name][:16])


def cmd_augment(args, summary: Summary) -> None:
    if args.sets:
        # Union of already-filtered retrieval files.
        if not (args.qa and args.corpus):
            raise UsageError("augment --sets needs --qa and --corpus")
        corpus = read_corpus(args.corpus)
        gold = load_qa_dataset(args.qa, corpus)
        sets = [read_retrievals(p) for p in args.sets]
        d_aug = aggregate(sets, gold.query_index, corpus.text)
        t, merge = build_training_set(gold, d_aug)
        counts = {"d_aug": len(d_aug), "deduplicated": sum(len(s) for s in sets) - len(d_aug), **merge.as_dict(), "t_pairs": t.m}
        settings = {"sets": [s.spec_id for s in sets]}
        inputs = {"qa": args.qa, "corpus": args.corpus, "sets": list(args.sets)}
        cfg_digest = None
    else:
        if not (args.config and args.preset):
            raise UsageError("augment needs --config and --preset, or --sets")
        cfg = load_config(args.config)
        inputs_data = load_inputs(cfg)
        seed = args.seed if args.seed is not None else cfg.seeds[0]
        k = args.k or cfg.k
        try:
            preset = resolve_preset(args.preset, cfg.spec_ids, cfg.domain_specs)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        needed = list(preset.specs)
        if preset.oracle not in (None, "own") and preset.oracle not in needed:
            needed.append(preset.oracle)
        artifacts = {s: train_spec_artifacts(cfg, s, inputs_data, seed, k) for s in needed}
        run = run_augmentation(preset, inputs_data.train, artifacts, inputs_data.sentence_text, k)
        t = run.t
        counts = {**run.counts(), "merge": run.merge.as_dict()}
        settings = {"preset": args.preset, "seed": seed, "k": k, "stage_seeds": {s: derive_seed(seed, "aug-retriever", s) for s in needed}}
        inputs = {"corpus": cfg.corpus, "train_qa": cfg.train_qa}
        cfg_digest = cfg.digest()
    write_qa_dataset(t, args.out)
    outputs = [args.out]
    rec = record_run("augment", settings, inputs, outputs, counts, cfg_digest)
    if args.manifest:
        write_json(args.manifest, rec)
    summary.add(t_pairs=t.m, augmented=t.stats()["augmented"], positive_rate=t.stats()["positive_rate"], config_digest=rec["config_digest"][:16], digest=rec["outputs"][Path(args.out).name][:16])


def cmd_predict(args, summary: Summary) -> None:
    clf = load_classifier(args.model)
    enc = _load_encoder_arg(args.enc, clf.spec_id)
    data = load_qa_dataset(args.qa, read_corpus(args.corpus) if args.corpus else None)
    s = score_pairs(clf, data.pairs, enc)
    labels = (s >= clf.threshold).astype(int)
    write_jsonl(args.out, ({"query_id": p.query_id, "sentence_id": p.sentence_id, "score": float(v), "label": int(z)} for p, v, z in zip(data.pairs, s, labels)))
    rec = record_run("predict", {"threshold": clf.threshold, "spec_id": clf.spec_id}, {"model": args.model, "enc": args.enc, "qa": args.qa}, [args.out], {"pairs": data.m, "predicted_positive": int(labels.sum())})
    summary.add(pairs=data.m, predicted_positive=int(labels.sum()), digest=rec["outputs"][Path(args.out).name][:16])


def read_predictions(path: str | Path) -> set[tuple[str, int]]:
    """Predicted-positive keys: records with label 1, or every record when no label field is present."""
    keys = set()
    for lineno, rec in iter_jsonl(path):
        try:
            key = (str(rec["query_id"]), int(rec["sentence_id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: prediction record needs query_id and sentence_id") from exc
        label = rec.get("label", 1)
        if label not in (0, 1) or isinstance(label, bool):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1")
        if label == 1:
            keys.add(key)
    return keys


def cmd_eval(args, summary: Summary) -> None:
    gold = load_qa_dataset(args.qa, read_corpus(args.corpus) if args.corpus else None)
    pred = read_predictions(args.pred)
    average = MACRO if args.macro else MICRO
    m = evaluate(pred, gold, average)
    summary.add(P=round(m.precision, 3), R=round(m.recall, 3), F1=round(m.f1, 3), tp=m.tp, fp=m.fp, fn=m.fn, tn=m.tn, average=average)
    if args.by_category is not None:
        cats = read_categories(args.by_category) if args.by_category else None
        by = evaluate_by_category(pred, gold, cats, average)
        summary.add(by_category={c: {"precision": v.precision, "recall": v.recall, "f1": v.f1, "support": v.support} for c, v in by.items()})
        for c, v in by.items():
            print(f"{c:<36} P={v.precision:.3f} R={v.recall:.3f} F1={v.f1:.3f} support={v.support}", file=sys.stderr)


def cmd_overlap(args, summary: Summary) -> None:
    sets = [read_retrievals(p) for p in args.sets]
    names = [s.spec_id for s in sets]
    if len(set(names)) != len(names):
        names = [Path(p).stem for p in args.sets]
    if len(set(names)) != len(names):
        raise DataError("overlap: sets need distinct spec_ids or file names")
    st = overlap_stats(sets, names)
    text = render_overlap(st, "Exact-match overlap of retrieval sets")
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8", newline="\n")
        record_run("overlap", {"names": names}, {"sets": list(args.sets)}, [args.report], {"union": st.union})
    else:
        print(text, file=sys.stderr)
    summary.add(union=st.union, all_agree=st.intersection(names), regions={"&".join(r): c for r, c in st.regions.items()})


def cmd_experiment(args, summary: Summary) -> None:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    try:
        presets = args.presets or list(cfg.presets)
        for name in presets:
            resolve_preset(name, cfg.spec_ids, cfg.domain_specs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sweep = args.sweep if args.sweep is not None else None
    if args.no_sweep:
        sweep = []
    report = run_experiment(cfg, presets=presets, seeds=args.seeds, sweep=sweep, out_dir=out)
    summary.add(cells=len(report.cells), failed=len(report.errors()), seeds=",".join(map(str, report.seeds)), config_digest=report.config_digest[:16], manifest_digest=report.manifest.get("digest", "")[:16], report=str(out / "report" / "report.txt"))
    for name in report.presets:
        s = report.summary(name)
        if s is not None:
            summary.add(**{f"f1[{name}]": round(s["f1"].mean, 4)})


def cmd_synth(args, summary: Summary) -> None:
    from .synthetic import SyntheticConfig, generate, write_benchmark_config

    cfg = SyntheticConfig(seed=args.seed) if args.seed is not None else SyntheticConfig()
    bench = generate(cfg)
    out = Path(args.out)
    paths = bench.write(out)
    corpus = ingest_corpus([paths["docs"]])
    write_corpus(corpus, out / "corpus.l")
    cfg_path = write_benchmark_config(out)
    summary.add(sentences=corpus.size, train_pairs=len(bench.train), test_pairs=len(bench.test), config=str(cfg_path))


# --- parser ---

def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("encoder overrides")
    g.add_argument("--dim", type=_positive_int, help="embedding dimension d")
    g.add_argument("--feature-space", type=_positive_int, help="hashed feature space size V")
    g.add_argument("--hash-seed", type=int, help="feature hashing seed")
    g.add_argument("--features", type=_name_list, help=f"comma-separated feature kinds from {','.join(FEATURE_KINDS)}")
    g.add_argument("--batch-size", type=_positive_int, help="in-batch negatives batch size")
    g.add_argument("--learning-rate", type=float, help="gradient step size")
    g.add_argument("--epochs", type=_nonneg_int, help="training epochs")
    g.add_argument("--seed", type=int, help="initialization and shuffling seed")


def _add_classifier_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("classifier hyperparameters")
    g.add_argument("--learning-rate", type=float, help="gradient step size (default 0.5)")
    g.add_argument("--epochs", type=_nonneg_int, help="full-batch epochs (default 300)")
    g.add_argument("--l2", type=float, help="L2 penalty on weights (default 1e-3)")
    g.add_argument("--class-weight", type=float, help="positive-class loss weight (default: negatives/positives)")
    g.add_argument("--threshold", type=_probability, help="decision threshold tau in (0,1) (default 0.5)")
    g.add_argument("--seed", type=int, help="seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ensaug", description="Retrieval-based data augmentation for sentence-selection QA.")
    parser.add_argument("--version", action="version", version=f"ensaug {__version__}")
    parser.add_argument("--summary-json", metavar="PATH", help="also write the summary as line-delimited key/value records")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="stderr logging level")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="segment policy documents into a deduplicated sentence corpus")
    p.add_argument("--docs", nargs="+", required=True, help="document JSONL files or glob patterns ({doc_id, text} per line)")
    p.add_argument("--out", required=True, help="corpus output file")
    p.add_argument("--workers", type=_positive_int, default=1, help="parallel document readers")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="corpus and QA dataset statistics")
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--qa", help="QA file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-retriever", help="train a bi-encoder on the positive pairs of a QA file")
    p.add_argument("--qa", required=True, help="training QA file")
    p.add_argument("--spec", required=True, help="spec id; with --config, the declared spec to train")
    p.add_argument("--config", help="run configuration declaring the spec")
    p.add_argument("--corpus", help="corpus used to resolve sentence_id-only records")
    p.add_argument("--out", required=True, help="encoder output file")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_train_retriever)

    p = sub.add_parser("build-index", help="encode every corpus sentence into an exact search index")
    p.add_argument("--corpus", required=True, help="corpus file")
    p.add_argument("--enc", required=True, help="encoder file (.bin) or precomputed embeddings (.l/.jsonl)")
    p.add_argument("--out", required=True, help="index output file")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("retrieve", help="top-k sentences for every query of a QA file")
    p.add_argument("--idx", required=True, help="index file")
    p.add_argument("--enc", help="encoder file (default: the one recorded when the index was built)")
    p.add_argument("--qa", required=True, help="QA file whose queries are searched")
    p.add_argument("--corpus", help="corpus used to resolve sentence_id-only records")
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K, help=f"retrieval depth (default {DEFAULT_K})")
    p.add_argument("--partitions", type=_positive_int, default=1, help="scan the index in this many partitions")
    p.add_argument("--out", required=True, help="retrieval output file")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("train-oracle", help="train a filtering oracle on gold QA pairs")
    p.add_argument("--qa", required=True, help="gold training QA file")
    p.add_argument("--enc", required=True, help="encoder the oracle is bound to")
    p.add_argument("--corpus", help="corpus used to resolve sentence_id-only records")
    p.add_argument("--out", required=True, help="classifier output file")
    _add_classifier_flags(p)
    p.set_defaults(func=cmd_train_oracle)

    p = sub.add_parser("filter", help="keep retrieved pairs the oracle accepts")
    p.add_argument("--retrievals", required=True, help="raw retrieval file")
    p.add_argument("--oracle", required=True, help="oracle classifier file")
    p.add_argument("--enc", required=True, help="encoder the oracle is bound to")
    p.add_argument("--qa", required=True, help="QA file providing query texts")
    p.add_argument("--corpus", required=True, help="corpus providing sentence texts")
    p.add_argument("--threshold", type=_probability, help="override the oracle's tau")
    p.add_argument("--common-oracle", action="store_true", help="allow an oracle from a different spec (shared-oracle ablation)")
    p.add_argument("--out", required=True, help="filtered retrieval output file")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("augment", help="build the final training set T = gold + augmented positives")
    p.add_argument("--config", help="run configuration (trains retrievers and oracles for the preset)")
    p.add_argument("--preset", help="baseline, era, era-d, baseline-e, single:<spec>[:no-oracle], common-oracle:<spec>")
    p.add_argument("--seed", type=int, help="global seed (default: first configured seed)")
    p.add_argument("--k", type=_positive_int, help="retrieval depth (default: config k)")
    p.add_argument("--sets", nargs="+", help="instead of --config: filtered retrieval files to union")
    p.add_argument("--qa", help="gold QA file (with --sets)")
    p.add_argument("--corpus", help="corpus file (with --sets)")
    p.add_argument("--out", required=True, help="training set output file")
    p.add_argument("--manifest", help="also write the run record here")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-qa", help="train the final QA classifier on T")
    p.add_argument("--qa", required=True, help="training set (gold or augmented)")
    p.add_argument("--enc", required=True, help="encoder the classifier is bound to")
    p.add_argument("--corpus", help="corpus used to resolve sentence_id-only records")
    p.add_argument("--out", required=True, help="classifier output file")
    _add_classifier_flags(p)
    p.set_defaults(func=cmd_train_qa)

    p = sub.add_parser("predict", help="score and classify every pair of a QA file")
    p.add_argument("--model", required=True, help="classifier file")
    p.add_argument("--enc", required=True, help="encoder the classifier is bound to")
    p.add_argument("--qa", required=True, help="QA file to label")
    p.add_argument("--corpus", help="corpus used to resolve sentence_id-only records")
    p.add_argument("--out", required=True, help="predictions output file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="precision, recall and F1 of predictions against gold labels")
    p.add_argument("--pred", required=True, help="predictions file ({query_id, sentence_id, label?} per line)")
    p.add_argument("--qa", required=True, help="gold QA file")
    p.add_argument("--corpus", help="corpus used to resolve sentence_id-only records")
    p.add_argument("--by-category", nargs="?", const="", default=None, metavar="CATS", help="per-category breakdown; optional {query_id, category} file overrides the QA file's tags")
    p.add_argument("--macro", action="store_true", help="average per query instead of pooling all pairs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("overlap", help="exact-match Venn regions of two or more retrieval sets")
    p.add_argument("--sets", nargs="+", required=True, help="retrieval files")
    p.add_argument("--report", help="write the rendered table here")
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("experiment", help="preset x seed grid with report tables and a manifest")
    p.add_argument("--config", required=True, help="run configuration")
    p.add_argument("--seeds", type=_int_list, help="comma-separated global seeds (default: config seeds)")
    p.add_argument("--presets", type=_name_list, help="comma-separated presets (default: config presets)")
    p.add_argument("--sweep", type=_int_list, help="top-k sweep depths (default: config topk_sweep)")
    p.add_argument("--no-sweep", action="store_true", help="skip the top-k sweep")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="write the planted-topic benchmark, its corpus and a run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="generator seed")
    p.set_defaults(func=cmd_synth)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version, or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("ensaug: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    summary = Summary(args.command)
    try:
        args.func(args, summary)
    except UsageError as exc:
        print(f"ensaug {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"ensaug {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"ensaug {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"ensaug {args.command}: data error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # Invalid settings or data shapes rejected by a stage (e.g. fewer positives than the batch size).
        print(f"ensaug {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(summary.line())
    if args.summary_json:
        summary.write(args.summary_json)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
