"""Vocabulary, padded sentence-grid structuring, and embedding file IO.

Documents are chunked into fixed-width pseudo-sentences (clinical notes
carry no reliable punctuation), truncated after S_max sentences and
tail-padded with id 0. Id 0 is reserved for padding, id 1 for unknown
tokens.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import LabeledNote

PAD_ID = 0
UNK_ID = 1

DEFAULT_S_MAX = 100
DEFAULT_T_MAX = 25


class TextPipelineError(ValueError):
    pass


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_count: int

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.lookup(tok) for tok in text.split()]


@dataclass
class TokenizedDocument:
    grid: np.ndarray  # (S_max, T_max) int32, PAD_ID at tails
    n_real_sentences: int
    sentence_lengths: list[int]  # real token count per sentence row

    @property
    def n_real_tokens(self) -> int:
        return sum(self.sentence_lengths)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (|V|, d_e) float64, row PAD_ID all zeros

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class LabelEmbeddings:
    labels: list[str]
    matrix: np.ndarray  # (|Y|, d_l) float64

    def row(self, label: str) -> np.ndarray:
        return self.matrix[self.labels.index(label)]


def build_vocab(train_notes: list[LabeledNote], min_count: int = 1) -> Vocabulary:
    """Frequency-thresholded vocabulary from the train split only.

    Ids 0/1 are reserved; remaining ids run by descending train frequency,
    ties by token text ascending.
    """
    if min_count < 1:
        raise TextPipelineError("min_count must be >= 1")
    counts = Counter()
    for note in train_notes:
        counts.update(note.text.split())
    if not counts:
        raise TextPipelineError("cannot build a vocabulary from an empty corpus")

    kept = [tok for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    id_to_token = ["<pad>", "<unk>"] + kept
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token, min_count=min_count)


def structure_document(
    note: LabeledNote,
    vocab: Vocabulary,
    s_max: int = DEFAULT_S_MAX,
    t_max: int = DEFAULT_T_MAX,
) -> TokenizedDocument:
    """Chunk the token stream into consecutive T_max-wide pseudo-sentences."""
    if s_max < 1 or t_max < 1:
        raise TextPipelineError("s_max and t_max must be >= 1")
    ids = vocab.encode(note.text)[: s_max * t_max]
    grid = np.full((s_max, t_max), PAD_ID, dtype=np.int32)
    lengths = []
    for s in range(0, len(ids), t_max):
        row = ids[s : s + t_max]
        grid[len(lengths), : len(row)] = row
        lengths.append(len(row))
    return TokenizedDocument(
        grid=grid, n_real_sentences=len(lengths), sentence_lengths=lengths
    )


def save_embeddings(table: EmbeddingTable, vocab: Vocabulary, path) -> None:
    """Text format: `<count> <dim>` header, then one `token v1 .. vd` line."""
    with open(path, "w") as f:
        f.write(f"{len(vocab)} {table.dim}\n")
        for i, token in enumerate(vocab.id_to_token):
            values = " ".join("%.9g" % v for v in table.matrix[i])
            f.write(f"{token} {values}\n")


def load_embeddings(path) -> tuple[EmbeddingTable, list[str]]:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2:
            raise TextPipelineError(f"{path}: malformed embedding header")
        count, dim = int(header[0]), int(header[1])
        tokens = []
        matrix = np.zeros((count, dim), dtype=np.float64)
        for i in range(count):
            parts = f.readline().rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise TextPipelineError(f"{path}: bad row {i}")
            tokens.append(parts[0])
            matrix[i] = [float(x) for x in parts[1:]]
    return EmbeddingTable(matrix=matrix), tokens
