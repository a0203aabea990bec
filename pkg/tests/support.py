"""Shared fixture builders: a tiny deterministic checkpoint over real ICD
codes plus helpers to run the review service against it.

Runnable directly to host a fixture service for frontend tests:
    python3 tests/support.py --port 8901 --data-dir /tmp/review-data
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from medcoder.corpus import LabeledNote
from medcoder.skipgram import train_skipgram
from medcoder.text_pipeline import build_vocab
from medcoder.trainer import Checkpoint, TrainConfig, train

MAPS_DIR = Path(__file__).parent / "data" / "maps"

# each code owns marker tokens; letters that mention them get that code
MARKERS = {
    "427.31": ["afib", "irregular", "palpitations"],
    "719.46": ["knee", "joint", "tenderness"],
    "480.8": ["cough", "viral", "pneumonia"],
    "999.99": ["mystery", "unmapped", "oddity"],
}


FILLERS = ["patient", "seen", "today", "ward", "stable", "review"]


def _marker_text(codes: list[str], rng) -> str:
    tokens = []
    for code in codes:
        tokens += MARKERS[code] * 2
    tokens += [rng.choice(FILLERS) for _ in range(rng.randint(2, 5))]
    rng.shuffle(tokens)
    return " ".join(tokens)


def fixture_corpus() -> list[LabeledNote]:
    import random

    rng = random.Random(41)
    notes = []
    combos = [
        ["427.31"], ["719.46"], ["480.8"], ["999.99"],
        ["427.31", "719.46"], ["427.31", "480.8"], ["719.46", "999.99"],
        ["480.8", "999.99"],
    ]
    for i, codes in enumerate(combos * 6):
        notes.append(LabeledNote(subject_id=i, hadm_id=1000 + i,
                                 text=_marker_text(codes, rng),
                                 labels=list(codes)))
    return notes


def fixture_checkpoint(mode: str = "HLAN") -> Checkpoint:
    notes = fixture_corpus()
    vocab = build_vocab(notes)
    embeddings = train_skipgram(notes, vocab, dim=10, window=2, negatives=3,
                                epochs=2, seed=7)
    config = TrainConfig(
        learning_rate=0.02, dropout_rate=0.0, l2_lambda=0.0, batch_size=8,
        epochs=60, threshold=0.5, seed=7, mode=mode, d_hw=8, d_hs=8,
        s_max=3, t_max=8,
    )
    return train(notes, config, vocab, embeddings)


def letter_for(codes: list[str], seed: int = 97) -> str:
    # same construction as the training docs (and vocabulary-only words):
    # the tiny fixture model does not generalize past its own distribution
    import random

    return _marker_text(codes, random.Random(seed)) + "."


def main(argv: list[str]) -> int:
    import argparse

    from medcoder.service import CoderService, SnomedTables, serve

    parser = argparse.ArgumentParser(description="run a fixture review service")
    parser.add_argument("--port", type=int, default=8901)
    parser.add_argument("--data-dir", required=True)
    parser.add_argument("--ckpt", help="optional pre-built checkpoint path")
    args = parser.parse_args(argv)

    if args.ckpt and Path(args.ckpt).exists():
        ckpt = Checkpoint.load(args.ckpt)
    else:
        ckpt = fixture_checkpoint()
        if args.ckpt:
            ckpt.save(args.ckpt)
    service = CoderService(
        data_dir=args.data_dir,
        checkpoint=ckpt,
        snomed_tables=SnomedTables(MAPS_DIR),
        threshold=0.5,
    )
    print(f"fixture service ready on port {args.port}", flush=True)
    serve(service, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
