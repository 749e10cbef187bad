"""Corpus evaluation: judge-based fact scores, salient scores and text metrics, written as JSON/CSV."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from ..kg_data import KGGraph, linearize, split_tokens
from .facts import FactEvaluator, common_fact_verdicts, compute_salient, parse_list_response
from .judge import JudgeClient, Transcript
from .metrics import bleu4, corpus_bleu4, rouge_l

logger = logging.getLogger(__name__)

SAMPLE_COLUMNS = [
    "id", "n_input", "n_common", "n_hallucinated", "n_output", "precision", "recall",
    "hallucination_rate", "degenerate", "salient_precision", "salient_recall",
    "salient_recall_degenerate", "fluency", "bleu4", "rouge_l",
]
AGGREGATE_COLUMNS = [
    "avg_precision", "avg_recall", "avg_hallucination", "avg_salient_precision", "avg_salient_recall",
    "bleu", "rouge_l", "fluency", "meteor", "factcc", "bartscore", "n_samples", "n_judged",
]
# reserved for external scorers that are not run here
RESERVED_COLUMNS = ("meteor", "factcc", "bartscore")


class ReportSchemaError(ValueError):
    pass


@dataclass
class EvalItem:
    id: str
    graph: KGGraph
    output: str
    reference: str | None = None


def _mean(values: Iterable[float]) -> float | None:
    values = [v for v in values if v is not None]
    return fmean(values) if values else None


def evaluate_corpus(items: Sequence[EvalItem], judge: JudgeClient, salient: Sequence[str],
                    n_judged: int = 50, transcript: Transcript | None = None,
                    relation_labels: Iterable[str] | None = None,
                    max_in_flight: int = 4) -> tuple[list[dict], dict, Transcript]:
    """Score every item with BLEU/ROUGE-L and the first ``n_judged`` with the judge."""
    transcript = transcript if transcript is not None else Transcript()
    evaluator = FactEvaluator(judge, transcript=transcript, max_in_flight=max_in_flight)
    labels = list(relation_labels) if relation_labels is not None else None
    rows: list[dict] = []
    for k, item in enumerate(items):
        cand = split_tokens(item.output)
        row: dict = {c: None for c in SAMPLE_COLUMNS}
        row["id"] = item.id
        if item.reference is not None:
            ref = split_tokens(item.reference)
            row["bleu4"] = bleu4(cand, ref)
            row["rouge_l"] = rouge_l(cand, ref)
        if k < n_judged:
            lin = linearize(item.graph)
            res = evaluator.evaluate(item.id, lin, item.output)
            row.update(res.to_dict())
            entries = transcript.for_sample(item.id)
            facts = parse_list_response(next(e for e in entries if e.template_id == "input_facts").response)
            sal = compute_salient(facts, common_fact_verdicts(entries), salient, res.n_output,
                                  labels if labels is not None else item.graph.relations)
            row["salient_precision"] = sal.precision
            row["salient_recall"] = sal.recall
            row["salient_recall_degenerate"] = sal.degenerate_recall
            flu = [e for e in entries if e.template_id == "fluency"]
            row["fluency"] = evaluator_fluency(flu[-1].response) if flu else None
        rows.append(row)
    agg = aggregate(rows)
    refs = [(split_tokens(i.output), split_tokens(i.reference)) for i in items if i.reference is not None]
    agg["bleu"] = corpus_bleu4([c for c, _ in refs], [r for _, r in refs]) if refs else None
    return rows, agg, transcript


def evaluator_fluency(raw: str) -> float | None:
    m = re.search(r"[1-5](?:\.\d+)?", raw)
    return float(m.group()) if m else None


def aggregate(rows: Sequence[Mapping]) -> dict:
    """Corpus averages. P and H skip degenerate samples (no output facts); salient R skips
    samples without salient input facts."""
    judged = [r for r in rows if r.get("n_input") is not None]
    live = [r for r in judged if not r["degenerate"]]
    agg = {c: None for c in AGGREGATE_COLUMNS}
    agg.update({
        "avg_precision": _mean(r["precision"] for r in live),
        "avg_recall": _mean(r["recall"] for r in judged),
        "avg_hallucination": _mean(r["hallucination_rate"] for r in live),
        "avg_salient_precision": _mean(r["salient_precision"] for r in live),
        "avg_salient_recall": _mean(r["salient_recall"] for r in judged if not r["salient_recall_degenerate"]),
        "rouge_l": _mean(r["rouge_l"] for r in rows),
        "bleu": None,
        "fluency": _mean(r["fluency"] for r in judged),
        "n_samples": len(rows),
        "n_judged": len(judged),
    })
    return agg


def write_report(out_dir: str | Path, rows: Sequence[Mapping], agg: Mapping,
                 transcript: Transcript | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"per_sample_json": out / "per_sample.json", "per_sample_csv": out / "per_sample.csv",
             "aggregate_json": out / "aggregate.json"}
    paths["per_sample_json"].write_text(json.dumps(list(rows), indent=1), encoding="utf-8")
    with paths["per_sample_csv"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SAMPLE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({c: "" if r.get(c) is None else r[c] for c in SAMPLE_COLUMNS})
    paths["aggregate_json"].write_text(json.dumps(dict(agg), indent=1), encoding="utf-8")
    if transcript is not None:
        paths["transcript"] = out / "transcript.jsonl"
        transcript.write(paths["transcript"])
    return paths


def load_report(eval_dir: str | Path) -> tuple[list[dict], dict]:
    d = Path(eval_dir)
    rows = json.loads((d / "per_sample.json").read_text(encoding="utf-8"))
    agg = json.loads((d / "aggregate.json").read_text(encoding="utf-8"))
    missing = [c for c in AGGREGATE_COLUMNS if c not in agg]
    if missing or (rows and set(rows[0]) != set(SAMPLE_COLUMNS)):
        raise ReportSchemaError(f"{d}: report schema mismatch (missing aggregate columns {missing})")
    return rows, agg


def compare_runs(runs: Mapping[str, str | Path], out_dir: str | Path) -> tuple[Path, Path]:
    """Merge aggregate reports of several runs into one CSV and a P/R/H bar chart."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for name, eval_dir in runs.items():
        _, agg = load_report(eval_dir)
        table.append({"run": name, **{c: agg.get(c) for c in AGGREGATE_COLUMNS}})
    csv_path = out / "comparison.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["run"] + AGGREGATE_COLUMNS)
        w.writeheader()
        for row in table:
            w.writerow({k: "" if v is None else v for k, v in row.items()})

    metrics = [("avg_precision", "P"), ("avg_recall", "R"), ("avg_hallucination", "H")]
    fig, ax = plt.subplots(figsize=(max(4, 1.6 * len(table) + 2), 3.5))
    width = 0.8 / len(metrics)
    for m, (key, label) in enumerate(metrics):
        vals = [r[key] if r[key] is not None else math.nan for r in table]
        ax.bar([i + m * width for i in range(len(table))], vals, width, label=label)
    ax.set_xticks([i + width for i in range(len(table))], [r["run"] for r in table], rotation=15)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.legend()
    fig.tight_layout()
    png = out / "prh.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return csv_path, png
