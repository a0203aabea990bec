"""Skip-gram with negative sampling, for word and label embeddings.

Plain-python/numpy implementation with tied center/context vectors: one
table, symmetric sigmoid updates on (center, context) pairs against k
noise samples drawn from the unigram^0.75 distribution. Tying makes
cosine similarity track first-order co-occurrence directly, which is the
behaviour the label-embedding initialisation relies on (two-table SGNS
anti-correlates tokens that only ever appear in each other's context).
Training order is fixed, so a seed fully determines the result. Label
embeddings reuse the same core with each document's label list treated
as one sentence and a full-sentence window.
"""

from __future__ import annotations

import numpy as np

from .corpus import LabeledNote
from .text_pipeline import (
    PAD_ID,
    EmbeddingTable,
    LabelEmbeddings,
    TextPipelineError,
    Vocabulary,
)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _init_table(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(n, dim)).astype(np.float64)


def _noise_distribution(sequences: list[list[int]], n_items: int) -> np.ndarray:
    counts = np.zeros(n_items, dtype=np.float64)
    for seq in sequences:
        for item in seq:
            counts[item] += 1
    weights = counts**0.75
    total = weights.sum()
    if total == 0:
        raise TextPipelineError("no tokens to train on")
    return np.cumsum(weights / total)


def _sgns(
    sequences: list[list[int]],
    n_items: int,
    dim: int,
    window: int | None,
    negatives: int,
    epochs: int,
    lr: float,
    seed: int,
    freeze_row0: bool,
) -> np.ndarray:
    """Core SGNS loop; window=None pairs every token with its whole sentence."""
    rng = np.random.default_rng(seed)
    table = _init_table(rng, n_items, dim)
    if freeze_row0:
        table[PAD_ID] = 0.0
    if epochs == 0:
        return table

    noise_cdf = _noise_distribution(sequences, n_items)
    for _ in range(epochs):
        for seq in sequences:
            for i, center in enumerate(seq):
                if window is None:
                    lo, hi = 0, len(seq)
                else:
                    lo, hi = max(0, i - window), min(len(seq), i + window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = seq[j]
                    draws = np.searchsorted(noise_cdf, rng.random(negatives))
                    # self/positive draws would repel a vector from itself
                    draws = draws[(draws != center) & (draws != context)]
                    targets = np.concatenate(([context], draws))
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    v = table[center].copy()
                    u = table[targets]
                    grad = _sigmoid(u @ v) - labels  # (k+1,)
                    table[targets] -= lr * grad[:, None] * v[None, :]
                    table[center] -= lr * grad @ u
    if freeze_row0:
        table[PAD_ID] = 0.0
    return table


def train_skipgram(
    train_notes: list[LabeledNote],
    vocab: Vocabulary,
    dim: int = 100,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> EmbeddingTable:
    """Word embeddings over the cleaned token streams of the train split."""
    if window < 1 or negatives < 1:
        raise TextPipelineError("window and negatives must be >= 1")
    if len(vocab) < 3:
        raise TextPipelineError("vocabulary too small to train embeddings")
    sequences = [vocab.encode(note.text) for note in train_notes if note.text]
    matrix = _sgns(
        sequences, len(vocab), dim, window, negatives, epochs, lr, seed,
        freeze_row0=True,
    )
    return EmbeddingTable(matrix=matrix)


def train_label_embeddings(
    train_notes: list[LabeledNote],
    dim: int = 100,
    negatives: int = 5,
    epochs: int = 20,
    lr: float = 0.025,
    seed: int = 0,
) -> LabelEmbeddings:
    """Label co-occurrence embeddings: one document's label list = one sentence.

    Labels that appear together across documents end up close in cosine,
    which is what the attention/output initialisation wants to exploit.
    """
    labels = sorted({code for note in train_notes for code in note.labels})
    if len(labels) < 2:
        raise TextPipelineError("need at least 2 distinct labels")
    index = {code: i for i, code in enumerate(labels)}
    sequences = [[index[c] for c in note.labels] for note in train_notes if note.labels]
    matrix = _sgns(
        sequences, len(labels), dim, None, negatives, epochs, lr, seed,
        freeze_row0=False,
    )
    return LabelEmbeddings(labels=labels, matrix=matrix)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(a @ b / denom)
