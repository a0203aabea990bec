"""Attention heatmap export: self-contained HTML (blue shading per token)
and a machine-readable TSV twin.

Display weight = word weight x its sentence's weight, normalized by the
document maximum so the strongest token is exactly 1; the HTML renders
each token on a blue background whose opacity equals that weight.
"""

from __future__ import annotations

import html
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .han import MODE_HLAN, AttentionMap, ModelError, PredictionSet
from .text_pipeline import TokenizedDocument, Vocabulary


class VizError(ValueError):
    pass


@dataclass
class VizToken:
    sentence: int
    position: int
    token: str
    word_weight: float
    sentence_weight: float
    display_weight: float


@dataclass
class VizDocument:
    tokens: list[VizToken]
    code_lines: list[str]  # console-format header: code, probability, mapping
    label: str | None = None  # which label's map is shown (HLAN)

    def text(self) -> str:
        return " ".join(t.token for t in self.tokens)


def compose_display_weights(
    attention: AttentionMap,
    doc: TokenizedDocument,
    label_index: int | None = None,
) -> np.ndarray:
    """Per-real-token display weight in [0,1], flat in reading order."""
    word, sentence = attention.for_label(
        label_index if attention.mode == MODE_HLAN else None
    )
    combined = []
    for s in range(doc.n_real_sentences):
        for t in range(doc.sentence_lengths[s]):
            combined.append(word[s, t] * sentence[s])
    weights = np.asarray(combined, dtype=np.float64)
    peak = weights.max(initial=0.0)
    return weights / peak if peak > 0 else weights


def build_viz(
    doc: TokenizedDocument,
    vocab: Vocabulary,
    attention: AttentionMap,
    code_lines: list[str] | None = None,
    label: str | None = None,
    labels: list[str] | None = None,
) -> VizDocument:
    """Assemble the per-token rows for one document and one label's map."""
    label_index = None
    if attention.mode == MODE_HLAN:
        if label is None:
            raise VizError("HLAN attention maps are per label; pass one")
        if labels is None or label not in labels:
            raise VizError(f"unknown label {label}")
        label_index = labels.index(label)
    word, sentence = attention.for_label(label_index)
    display = compose_display_weights(attention, doc, label_index)

    tokens = []
    i = 0
    for s in range(doc.n_real_sentences):
        for t in range(doc.sentence_lengths[s]):
            tokens.append(VizToken(
                sentence=s, position=t,
                token=vocab.id_to_token[doc.grid[s, t]],
                word_weight=float(word[s, t]),
                sentence_weight=float(sentence[s]),
                display_weight=float(display[i]),
            ))
            i += 1
    return VizDocument(tokens=tokens, code_lines=list(code_lines or []),
                       label=label)


_HTML_HEAD = """<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>attention heatmap</title>
<style>
body { font-family: Georgia, serif; margin: 2em; max-width: 70em; }
.codes { background: #f4f6f8; padding: 0.8em 1em; white-space: pre-wrap;
         font-family: monospace; border-left: 3px solid #1e66ff; }
.sentence { margin: 0.25em 0; line-height: 1.8; }
.tok { padding: 0.05em 0.15em; border-radius: 2px; }
</style>
</head>
<body>
"""


def render_attention_html(viz: VizDocument, out_path: str | Path) -> None:
    """Self-contained page: code header plus blue-shaded tokens."""
    parts = [_HTML_HEAD]
    heading = "attention heatmap"
    if viz.label is not None:
        heading += f" for {viz.label}"
    parts.append(f"<h1>{html.escape(heading)}</h1>\n")
    if viz.code_lines:
        body = "\n".join(html.escape(line) for line in viz.code_lines)
        parts.append(f'<div class="codes">{body}</div>\n')

    current = None
    for tok in viz.tokens:
        if tok.sentence != current:
            if current is not None:
                parts.append("</div>\n")
            parts.append('<div class="sentence">')
            current = tok.sentence
        escaped = html.escape(tok.token)
        if tok.display_weight > 0:
            style = f"background-color: rgba(30,102,255,{tok.display_weight:.4f})"
            parts.append(f'<span class="tok" style="{style}">{escaped}</span> ')
        else:
            parts.append(f'<span class="tok">{escaped}</span> ')
    if current is not None:
        parts.append("</div>\n")
    parts.append("</body>\n</html>\n")
    Path(out_path).write_text("".join(parts), encoding="utf-8")


TSV_COLUMNS = ("sentence_idx", "token_idx", "token", "word_weight",
               "sentence_weight", "display_weight")


def export_attention_tsv(viz: VizDocument, out_path: str | Path) -> None:
    """One row per real token; weights at 6 decimals."""
    lines = ["\t".join(TSV_COLUMNS)]
    for tok in viz.tokens:
        lines.append("\t".join([
            str(tok.sentence), str(tok.position), tok.token,
            f"{tok.word_weight:.6f}", f"{tok.sentence_weight:.6f}",
            f"{tok.display_weight:.6f}",
        ]))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_attention_tsv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if tuple(header) != TSV_COLUMNS:
            raise VizError(f"{path}: unexpected TSV header")
        for line in f:
            fields = line.rstrip("\n").split("\t")
            rows.append({
                "sentence_idx": int(fields[0]),
                "token_idx": int(fields[1]),
                "token": fields[2],
                "word_weight": float(fields[3]),
                "sentence_weight": float(fields[4]),
                "display_weight": float(fields[5]),
            })
    return rows
