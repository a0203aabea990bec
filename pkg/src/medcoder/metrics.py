"""Evaluation suite: confusion counts, micro/macro F1, precision@k.

Macro F1 averages over the whole label space by default (absent labels
contribute 0), which is what produces the tiny macro scores typical of
long-tail code sets; pass macro_over="present" to average only labels
that occur. 0/0 ratios are defined as 0 and flagged in the report.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

from .corpus import LabeledNote
from .han import forward, predict_codes
from .text_pipeline import structure_document

# Historical full-corpus run of this architecture (100-note test sample);
# not reproducible at desk scale, kept for report context.
REFERENCE_RESULTS = {"p_at_15": 0.599, "macro_f1": 0.041, "micro_f1": 0.403}


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionTotals:
    per_label: dict[str, list[int]]  # code -> [tp, fp, fn]
    tp: int
    fp: int
    fn: int
    label_space: list[str]
    n_docs: int


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    precision: float
    recall: float
    p_at_k: dict[int, float]
    per_doc: list[dict]
    n_docs: int
    threshold: float
    degenerate: bool = False

    def to_json(self) -> str:
        payload = {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "precision": self.precision,
            "recall": self.recall,
            "p_at_k": {str(k): v for k, v in sorted(self.p_at_k.items())},
            "n_docs": self.n_docs,
            "threshold": self.threshold,
            "degenerate": self.degenerate,
            "per_doc": self.per_doc,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_table(self) -> str:
        lines = [
            f"documents evaluated: {self.n_docs}",
            f"threshold:           {self.threshold}",
            f"precision:           {self.precision:.4f}",
            f"recall:              {self.recall:.4f}",
            f"micro F1:            {self.micro_f1:.4f}",
            f"macro F1:            {self.macro_f1:.4f}",
        ]
        for k, v in sorted(self.p_at_k.items()):
            lines.append(f"P@{k:<2}                 {v:.4f}")
        if self.degenerate:
            lines.append("warning: no predictions and no gold labels (scores forced to 0)")
        return "\n".join(lines)


def confusion_counts(
    predicted: list[set[str]],
    gold: list[set[str]],
    label_space: list[str] | None = None,
) -> ConfusionTotals:
    """Per-document TP/FP/FN accumulated per label and pooled."""
    if len(predicted) != len(gold):
        raise MetricsError("predicted and gold lists differ in length")
    seen: dict[str, list[int]] = {}
    for pred_set, gold_set in zip(predicted, gold):
        for code in pred_set | gold_set:
            row = seen.setdefault(code, [0, 0, 0])
            if code in pred_set and code in gold_set:
                row[0] += 1
            elif code in pred_set:
                row[1] += 1
            else:
                row[2] += 1
    if label_space is None:
        label_space = sorted(seen)
    for code in label_space:
        seen.setdefault(code, [0, 0, 0])
    tp = sum(r[0] for r in seen.values())
    fp = sum(r[1] for r in seen.values())
    fn = sum(r[2] for r in seen.values())
    return ConfusionTotals(per_label=seen, tp=tp, fp=fp, fn=fn,
                           label_space=list(label_space), n_docs=len(gold))


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def aggregate_f1(
    totals: ConfusionTotals, macro_over: str = "all"
) -> tuple[float, float, float, float]:
    """(micro_f1, macro_f1, precision, recall) from accumulated counts."""
    if totals.n_docs < 1:
        raise MetricsError("need at least one document")
    precision = _safe_div(totals.tp, totals.tp + totals.fp)
    recall = _safe_div(totals.tp, totals.tp + totals.fn)
    micro = _safe_div(2 * precision * recall, precision + recall)

    if macro_over == "all":
        codes = totals.label_space
    elif macro_over == "present":
        codes = [c for c, r in totals.per_label.items() if sum(r) > 0]
    else:
        raise MetricsError(f"macro_over must be 'all' or 'present', got {macro_over}")
    f1s = []
    for code in codes:
        tp, fp, fn = totals.per_label.get(code, (0, 0, 0))
        f1s.append(_safe_div(2 * tp, 2 * tp + fp + fn))
    macro = sum(f1s) / len(f1s) if f1s else 0.0
    return micro, macro, precision, recall


def precision_at_k(
    ranked: list[list[str]], gold: list[set[str]], k: int
) -> float:
    """Mean over documents of |top-k ∩ gold| / k (k stays the divisor even
    when fewer than k codes were ranked)."""
    if k < 1:
        raise MetricsError("k must be >= 1")
    if len(ranked) != len(gold):
        raise MetricsError("ranked and gold lists differ in length")
    if not ranked:
        raise MetricsError("need at least one document")
    total = 0.0
    for codes, gold_set in zip(ranked, gold):
        total += len(set(codes[:k]) & gold_set) / k
    return total / len(ranked)


def evaluate_run(
    checkpoint,
    test_set: list[LabeledNote],
    threshold: float = 0.5,
    ks: tuple[int, ...] = (5, 8, 15),
    sample_n: int | None = None,
    seed: int = 0,
    macro_over: str = "all",
) -> EvalReport:
    """Forward + threshold every note, then assemble the metric report.

    sample_n mirrors the sampled-notes protocol: a seeded draw of that many
    documents from the test set.
    """
    if not test_set:
        raise MetricsError("empty test set")
    notes = test_set
    if sample_n is not None:
        if sample_n > len(test_set):
            raise MetricsError("sample_n exceeds the test set")
        rng = random.Random(seed)
        notes = rng.sample(test_set, sample_n)

    config = checkpoint.config
    predicted, ranked, gold, per_doc = [], [], [], []
    for note in notes:
        doc = structure_document(note, checkpoint.vocab, config.s_max, config.t_max)
        pred, _ = forward(doc, checkpoint.params, threshold=threshold)
        chosen = predict_codes(pred, threshold=threshold)
        predicted.append(set(chosen))
        ranked.append(pred.ranked)
        gold.append(set(note.labels))

    totals = confusion_counts(predicted, gold, label_space=checkpoint.labels)
    micro, macro, precision, recall = aggregate_f1(totals, macro_over=macro_over)
    p_at_k = {k: precision_at_k(ranked, gold, k) for k in ks}

    for note, pred_set, gold_set in zip(notes, predicted, gold):
        per_doc.append({
            "hadm_id": note.hadm_id,
            "tp": len(pred_set & gold_set),
            "fp": len(pred_set - gold_set),
            "fn": len(gold_set - pred_set),
        })
    degenerate = totals.tp + totals.fp + totals.fn == 0
    return EvalReport(
        micro_f1=micro, macro_f1=macro, precision=precision, recall=recall,
        p_at_k=p_at_k, per_doc=per_doc, n_docs=len(notes),
        threshold=threshold, degenerate=degenerate,
    )
