"""Text and CSV renderings of an ExperimentReport."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .analytics import BLEU_CONFIG, render_overlap
from .corpus import DEFAULT_CATEGORIES

REFERENCE_NOTE = (
    "Note: scores come from hashed linear encoders on the given data; full-scale transformer "
    "numbers are not reproduced, and no annotator-agreement row is computed. "
    "Corpus sentences come from a rule-based splitter."
)


def _oracle_mark(name: str) -> str:
    if name == "baseline":
        return "-"
    if name.startswith("common-oracle:"):
        return "common:" + name.split(":", 1)[1]
    if name == "baseline-e" or name.endswith(":no-oracle"):
        return "no"
    return "yes"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule] + [fmt(r) for r in rows])


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def main_table(report) -> tuple[str, str]:
    header = ["Method", "Oracle", "Precision", "Recall", "F1"]
    rows, csv_rows = [], []
    for name in report.presets:
        s = report.summary(name)
        if s is None:
            rows.append([name, _oracle_mark(name), "error", "error", "error"])
            csv_rows.append([name, _oracle_mark(name)] + [""] * 6)
            continue
        rows.append([name, _oracle_mark(name)] + [s[m].fmt() for m in ("precision", "recall", "f1")])
        csv_rows.append([name, _oracle_mark(name)] + [f"{s[m].mean:.6f}" for m in ("precision", "recall", "f1")] + [f"{s[m].std:.6f}" for m in ("precision", "recall", "f1")])
    text = _table(header, rows)
    csv_text = _csv(["method", "oracle", "precision_mean", "recall_mean", "f1_mean", "precision_std", "recall_std", "f1_std"], csv_rows)
    return text, csv_text


def breakdown_table(report, value: str = "f1") -> tuple[str, str]:
    cats_seen: list[str] = []
    per = {}
    for name in report.presets:
        per[name] = report.category_f1(name) if value == "f1" else report.category_correct(name)
        for c in per[name]:
            if c not in cats_seen:
                cats_seen.append(c)
    cats = [c for c in DEFAULT_CATEGORIES if c in cats_seen] + [c for c in cats_seen if c not in DEFAULT_CATEGORIES]
    header = ["Query Type", "%"] + report.presets
    rows, csv_rows = [], []
    for c in cats:
        share = report.shares.get(c, 0.0) * 100
        cells = []
        for name in report.presets:
            s = per[name].get(c)
            if s is None:
                cells.append("")
            elif value == "f1":
                cells.append(f"{s.mean * 100:.1f}")
            else:
                cells.append(f"{s.mean:.1f}")
        rows.append([c, f"{share:.0f}"] + cells)
        csv_rows.append([c, f"{share:.4f}"] + cells)
    return _table(header, rows), _csv(["category", "share_pct"] + report.presets, csv_rows)


def topk_table(report) -> tuple[str, str]:
    header = ["Method", "Filter", "top-k", "Precision", "Recall", "F1"]
    rows, csv_rows = [], []
    for name in report.sweep_presets:
        for k in report.ks:
            s = report.summary(name, k)
            if s is None:
                continue
            base = name.replace(":no-oracle", "")
            mark = "no" if name.endswith(":no-oracle") else "yes"
            rows.append([base, mark, str(k)] + [s[m].fmt() for m in ("precision", "recall", "f1")])
            csv_rows.append([base, mark, k] + [f"{s[m].mean:.6f}" for m in ("precision", "recall", "f1")])
    return _table(header, rows), _csv(["method", "filter", "k", "precision", "recall", "f1"], csv_rows)


def render_text(report) -> str:
    parts = [
        f"config digest: {report.config_digest}",
        f"seeds: {','.join(map(str, report.seeds))}   averaging: {report.averaging}   default top-k: {report.default_k}",
        "",
        "Test performance (mean±std over seeds, %)",
        main_table(report)[0],
        "",
        "F1 breakdown by query type (%)",
        breakdown_table(report, "f1")[0],
        "",
        "Correct predictions by query type (mean over seeds)",
        breakdown_table(report, "correct")[0],
    ]
    if report.sweep_presets:
        parts += ["", "With and without filtering by top-k (%)", topk_table(report)[0]]
    k = report.default_k
    if k in report.overlap_raw:
        parts += ["", render_overlap(report.overlap_raw[k], f"Exact-match overlap of raw retrievals (top-{k}, first seed)")]
    if k in report.overlap_filtered:
        parts += ["", render_overlap(report.overlap_filtered[k], f"Exact-match overlap after filtering (top-{k}, first seed)")]
    if k in report.bleu:
        parts += ["", f"BLEU between raw retrieved corpora (top-{k}, candidate vs reference)"]
        parts += [f"  {a} vs {b}: {v:.4f}" for (a, b), v in sorted(report.bleu[k].items())]
        parts += [f"  ({BLEU_CONFIG})"]
    errs = report.errors()
    if errs:
        parts += ["", "Failed cells"] + [f"  {c.preset} k={c.k} seed={c.seed}: {c.error}" for c in errs]
    parts += ["", REFERENCE_NOTE, ""]
    return "\n".join(parts)


def write_report(report, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.txt": render_text(report),
        "main.csv": main_table(report)[1],
        "breakdown_f1.csv": breakdown_table(report, "f1")[1],
        "breakdown_correct.csv": breakdown_table(report, "correct")[1],
    }
    if report.sweep_presets:
        files["topk.csv"] = topk_table(report)[1]
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8", newline="\n")
        paths.append(p)
    return paths
