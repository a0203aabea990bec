"""Command-line entry points for the coding pipeline.

    medcoder corpus build|split|top-k|synth ...
    medcoder embed train|labels ...
    medcoder train / grad-check / eval ...
    medcoder snomed resolve|stats ...
    medcoder viz ... / serve ...
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .corpus import (
    SyntheticConfig,
    build_labeled_notes,
    build_top_k_subset,
    generate_synthetic_corpus,
    read_code_table,
    read_noteevents,
    read_notes_labeled,
    split_dataset,
    write_notes_labeled,
)
from .han import MODE_HLAN, forward, init_params, predict_codes
from .metrics import evaluate_run
from .skipgram import train_label_embeddings, train_skipgram
from .snomed import format_resolution, mapping_stats
from .text_pipeline import (
    EmbeddingTable,
    LabelEmbeddings,
    Vocabulary,
    build_vocab,
    load_embeddings,
    save_embeddings,
    structure_document,
)
from .trainer import Checkpoint, TrainConfig, grad_check, train
from .viz import build_viz, export_attention_tsv, render_attention_html

logger = logging.getLogger(__name__)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    return args.func(args) or 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medcoder")
    sub = parser.add_subparsers(dest="command")

    corpus = sub.add_parser("corpus", help="corpus construction")
    corpus_sub = corpus.add_subparsers(dest="subcommand")

    p = corpus_sub.add_parser("build", help="join notes with ICD assignments")
    p.add_argument("--notes", required=True)
    p.add_argument("--diag", required=True)
    p.add_argument("--proc", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--category", default=corpus_mod.DEFAULT_CATEGORY)
    p.set_defaults(func=cmd_corpus_build)

    p = corpus_sub.add_parser("split", help="train/test split")
    p.add_argument("--input", required=True)
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_corpus_split)

    p = corpus_sub.add_parser("top-k", help="restrict to the k most frequent codes")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--codes-out")
    p.set_defaults(func=cmd_corpus_topk)

    p = corpus_sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", required=True, help="JSON file of generator settings")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_corpus_synth)

    embed = sub.add_parser("embed", help="embedding training")
    embed_sub = embed.add_subparsers(dest="subcommand")

    p = embed_sub.add_parser("train", help="skip-gram word embeddings")
    p.add_argument("--data", required=True, help="notes_labeled CSV")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--neg", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_train)

    p = embed_sub.add_parser("labels", help="label co-occurrence embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_labels)

    p = sub.add_parser("train", help="train the attention network")
    p.add_argument("--data", required=True, help="notes_labeled CSV (train split)")
    p.add_argument("--config", help="JSON file overriding TrainConfig fields")
    p.add_argument("--embeddings", help="embedding file from `embed train`")
    p.add_argument("--label-embeddings", help="file from `embed labels`")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--embed-dim", type=int, default=100,
                   help="random-init dimension when no embedding file is given")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--mode", choices=["HAN", "HLAN"], default="HLAN")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("eval", help="score a checkpoint against a test CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="5,8,15")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sample", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--macro-over", choices=["all", "present"], default="all")
    p.add_argument("--json", action="store_true", dest="as_json")
    p.set_defaults(func=cmd_eval)

    snomed = sub.add_parser("snomed", help="ICD to SNOMED resolution")
    snomed_sub = snomed.add_subparsers(dest="subcommand")

    p = snomed_sub.add_parser("resolve", help="resolve one ICD code")
    p.add_argument("--code", required=True)
    p.add_argument("--maps", required=True, help="directory of map/dictionary files")
    p.add_argument("--parent-first", action="store_true")
    p.set_defaults(func=cmd_snomed_resolve)

    p = snomed_sub.add_parser("stats", help="mapping-category statistics")
    p.add_argument("--input", required=True,
                   help="JSON array of ICD codes to resolve")
    p.add_argument("--maps", required=True)
    p.set_defaults(func=cmd_snomed_stats)

    p = sub.add_parser("viz", help="export an attention heatmap")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--letter", required=True, help="plain-text letter file")
    p.add_argument("--label", help="label selector (required for HLAN)")
    p.add_argument("--out", required=True, help="HTML output path")
    p.add_argument("--tsv", help="optional TSV output path")
    p.add_argument("--maps", help="optional maps dir for the code header")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--maps-dir", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--parent-first", action="store_true")
    p.set_defaults(func=cmd_serve)

    return parser


# ---------------------------------------------------------------------------


def cmd_corpus_build(args) -> int:
    notes = read_noteevents(args.notes)
    codes = read_code_table(args.diag, "diagnosis")
    codes += read_code_table(args.proc, "procedure")
    labeled, report = build_labeled_notes(notes, codes, category=args.category)
    write_notes_labeled(labeled, args.out)
    print(f"wrote {len(labeled)} labeled notes to {args.out}")
    print(f"skipped: {report.wrong_category} other-category, "
          f"{report.no_codes} without codes, {report.empty_text} empty after cleaning")
    return 0


def cmd_corpus_split(args) -> int:
    notes = read_notes_labeled(args.input)
    split = split_dataset(notes, args.ratio, args.seed)
    write_notes_labeled(split.train, args.train_out)
    write_notes_labeled(split.test, args.test_out)
    print(f"train {len(split.train)} / test {len(split.test)} (seed {args.seed})")
    return 0


def cmd_corpus_topk(args) -> int:
    notes = read_notes_labeled(args.input)
    subset, codes = build_top_k_subset(notes, args.k)
    write_notes_labeled(subset, args.out)
    if args.codes_out:
        Path(args.codes_out).write_text("\n".join(codes) + "\n")
    mean_labels = sum(len(n.labels) for n in subset) / len(subset)
    print(f"kept {len(subset)} notes over {len(codes)} codes "
          f"(mean {mean_labels:.1f} labels/doc)")
    return 0


def cmd_corpus_synth(args) -> int:
    settings = json.loads(Path(args.config).read_text())
    config = SyntheticConfig(**settings)
    paths = generate_synthetic_corpus(config, args.out_dir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _load_notes(path):
    notes = read_notes_labeled(path)
    if not notes:
        print(f"{path}: no notes", file=sys.stderr)
        raise SystemExit(1)
    return notes


def cmd_embed_train(args) -> int:
    notes = _load_notes(args.data)
    vocab = build_vocab(notes, min_count=args.min_count)
    table = train_skipgram(notes, vocab, dim=args.dim, window=args.window,
                           negatives=args.neg, epochs=args.epochs, lr=args.lr,
                           seed=args.seed)
    save_embeddings(table, vocab, args.out)
    print(f"wrote {len(vocab)} x {args.dim} embeddings to {args.out}")
    return 0


def cmd_embed_labels(args) -> int:
    notes = _load_notes(args.data)
    emb = train_label_embeddings(notes, dim=args.dim, epochs=args.epochs,
                                 seed=args.seed)
    vocab = Vocabulary(token_to_id={c: i for i, c in enumerate(emb.labels)},
                       id_to_token=list(emb.labels), min_count=1)
    save_embeddings(EmbeddingTable(matrix=emb.matrix), vocab, args.out)
    print(f"wrote {len(emb.labels)} x {args.dim} label embeddings to {args.out}")
    return 0


def _vocab_from_tokens(tokens: list[str], min_count: int) -> Vocabulary:
    return Vocabulary(token_to_id={t: i for i, t in enumerate(tokens)},
                      id_to_token=list(tokens), min_count=min_count)


def cmd_train(args) -> int:
    notes = _load_notes(args.data)
    overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    config = TrainConfig(**overrides)

    if args.embeddings:
        table, tokens = load_embeddings(args.embeddings)
        vocab = _vocab_from_tokens(tokens, args.min_count)
        embeddings = table
    else:
        vocab = build_vocab(notes, min_count=args.min_count)
        rng = np.random.default_rng(config.seed)
        matrix = rng.normal(0.0, 0.1, (len(vocab), args.embed_dim))
        matrix[0] = 0.0
        embeddings = EmbeddingTable(matrix=matrix)

    label_emb = None
    if args.label_embeddings:
        table, labels = load_embeddings(args.label_embeddings)
        label_emb = LabelEmbeddings(labels=labels, matrix=table.matrix)

    ckpt = train(notes, config, vocab, embeddings, label_embeddings=label_emb)
    ckpt.save(args.out)
    print(f"checkpoint with {len(ckpt.labels)} labels saved to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    from .corpus import LabeledNote

    words = [f"tok{i}" for i in range(10)]
    vocab = build_vocab([LabeledNote(0, 0, " ".join(words), ["x"])])
    rng = np.random.default_rng(args.seed)
    emb = EmbeddingTable(matrix=rng.normal(0, 0.2, (len(vocab), 4)))
    emb.matrix[0] = 0.0
    labels = ["L0", "L1", "L2"]
    params = init_params(emb, labels, mode=args.mode, d_hw=3, d_hs=3,
                         seed=args.seed)
    note = LabeledNote(0, 0, "tok1 tok2 tok3 tok4 tok5", ["L0", "L2"])
    doc = structure_document(note, vocab, s_max=2, t_max=3)
    target = np.array([1.0, 0.0, 1.0])
    err = grad_check(params, doc, target, eps=args.eps, n_samples=args.samples,
                     seed=args.seed)
    print(f"max relative error over sampled coordinates: {err:.3e}")
    if err >= 1e-4:
        print("FAIL: exceeds 1e-4", file=sys.stderr)
        return 1
    print("PASS: analytic gradients match central differences")
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    notes = _load_notes(args.data)
    ks = tuple(int(k) for k in str(args.k).split(",") if k)
    report = evaluate_run(ckpt, notes, threshold=args.threshold, ks=ks,
                          sample_n=args.sample, seed=args.seed,
                          macro_over=args.macro_over)
    print(report.to_json() if args.as_json else report.to_table())
    return 0


def _load_maps(maps_dir):
    from .service import SnomedTables

    return SnomedTables(maps_dir)


def cmd_snomed_resolve(args) -> int:
    tables = _load_maps(args.maps)
    resolution = tables.resolve(args.code, parent_first=args.parent_first)
    print(format_resolution(resolution))
    return 0


def cmd_snomed_stats(args) -> int:
    tables = _load_maps(args.maps)
    codes = json.loads(Path(args.input).read_text())
    resolutions = [tables.resolve(code) for code in codes]
    print(mapping_stats(resolutions).to_table())
    return 0


def cmd_viz(args) -> int:
    from .corpus import LabeledNote, clean_text

    ckpt = Checkpoint.load(args.ckpt)
    raw = Path(args.letter).read_text()
    cleaned = clean_text(raw)
    if not cleaned:
        print("letter is empty after cleaning", file=sys.stderr)
        return 1
    doc = structure_document(LabeledNote(0, 0, cleaned, []), ckpt.vocab,
                             ckpt.config.s_max, ckpt.config.t_max)
    pred, att = forward(doc, ckpt.params, threshold=args.threshold)
    codes = predict_codes(pred, threshold=args.threshold)

    lines = []
    tables = _load_maps(args.maps) if args.maps else None
    for code in codes:
        if tables:
            lines.append(format_resolution(tables.resolve(code),
                                           probability=pred.probability(code)))
        else:
            lines.append(f"{code} ({pred.probability(code):.3f})")

    viz = build_viz(doc, ckpt.vocab, att, code_lines=lines, label=args.label,
                    labels=ckpt.labels)
    render_attention_html(viz, args.out)
    print(f"wrote {args.out}")
    if args.tsv:
        export_attention_tsv(viz, args.tsv)
        print(f"wrote {args.tsv}")
    return 0


def cmd_serve(args) -> int:
    from .service import CoderService, SnomedTables, serve

    service = CoderService(
        data_dir=args.data_dir,
        checkpoint=Checkpoint.load(args.ckpt),
        snomed_tables=SnomedTables(args.maps_dir),
        threshold=args.threshold,
        parent_first=args.parent_first,
    )
    print(f"review service on http://127.0.0.1:{args.port}")
    serve(service, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
