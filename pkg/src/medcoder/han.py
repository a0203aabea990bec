"""Hierarchical attention network forward pass, HAN and HLAN modes.

Word-level Bi-GRU -> word attention -> sentence vectors -> sentence-level
Bi-GRU -> sentence attention -> per-label sigmoid scores. HAN shares one
context vector per attention level; HLAN gives every label its own context
row at both levels, producing per-label attention maps and a per-label
document representation scored against the matching output row.

In HLAN mode the sentence encoder consumes the label-mean of the per-label
sentence vectors, so the recurrent pass stays shared while pooling is
label-wise; duplicating all context rows then reproduces HAN exactly.

Everything is float64 numpy; forward is pure and reentrant. The batched
entry point returns the cache consumed by the gradient module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .text_pipeline import EmbeddingTable, LabelEmbeddings, TokenizedDocument

MODE_HAN = "HAN"
MODE_HLAN = "HLAN"

GATE_SUFFIXES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")

# probabilities stay strictly inside (0,1) even for saturated logits
_PROB_EPS = 1e-15


class ModelError(ValueError):
    pass


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ModelParams:
    mode: str
    labels: list[str]
    d_e: int
    d_hw: int
    d_hs: int
    d_aw: int
    d_as: int
    tensors: dict[str, np.ndarray]

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def gates(self, prefix: str) -> dict[str, np.ndarray]:
        return {s: self.tensors[f"{prefix}.{s}"] for s in GATE_SUFFIXES}

    def validate(self) -> None:
        v, e = self.tensors["embedding"].shape
        if e != self.d_e:
            raise ModelError("embedding dim mismatch")
        if self.mode not in (MODE_HAN, MODE_HLAN):
            raise ModelError(f"unknown mode {self.mode}")
        ctx_w = self.tensors["attn_w.ctx"]
        ctx_s = self.tensors["attn_s.ctx"]
        if self.mode == MODE_HLAN:
            if ctx_w.shape != (self.n_labels, self.d_aw):
                raise ModelError("attn_w.ctx must have one row per label")
            if ctx_s.shape != (self.n_labels, self.d_as):
                raise ModelError("attn_s.ctx must have one row per label")
        else:
            if ctx_w.shape != (self.d_aw,) or ctx_s.shape != (self.d_as,):
                raise ModelError("HAN context must be a single vector per level")
        if self.tensors["out.W"].shape != (self.n_labels, 2 * self.d_hs):
            raise ModelError("out.W shape mismatch")
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise ModelError(f"non-finite entries in {name}")


def tensor_order(mode: str) -> list[str]:
    """Declared tensor order; checkpoint layout depends on it."""
    names = ["embedding"]
    for prefix in ("wgru_f", "wgru_b", "sgru_f", "sgru_b"):
        names += [f"{prefix}.{s}" for s in GATE_SUFFIXES]
    names += ["attn_w.proj", "attn_w.bias", "attn_w.ctx"]
    names += ["attn_s.proj", "attn_s.bias", "attn_s.ctx"]
    names += ["out.W", "out.b"]
    return names


def is_bias(name: str) -> bool:
    return name.split(".")[-1].startswith("b")


def init_params(
    embedding: EmbeddingTable,
    labels: list[str],
    mode: str = MODE_HLAN,
    d_hw: int = 50,
    d_hs: int = 50,
    d_aw: int | None = None,
    d_as: int | None = None,
    seed: int = 0,
    label_embeddings: LabelEmbeddings | None = None,
) -> ModelParams:
    """Scaled-normal init; optionally seed label-wise rows from label embeddings.

    With label embeddings supplied, the per-label attention context rows and
    the output rows start as seeded linear projections of each label's
    embedding, so correlated codes start with correlated parameters.
    """
    rng = np.random.default_rng(seed)
    d_e = embedding.dim
    d_aw = d_aw or 2 * d_hw
    d_as = d_as or 2 * d_hs
    n_labels = len(labels)
    scale = 0.1

    tensors: dict[str, np.ndarray] = {}
    tensors["embedding"] = embedding.matrix.astype(np.float64).copy()
    tensors["embedding"][0] = 0.0

    def gate_block(prefix, d_in, d_hidden):
        for s in GATE_SUFFIXES:
            if s.startswith("W"):
                tensors[f"{prefix}.{s}"] = rng.normal(0, scale, (d_in, d_hidden))
            elif s.startswith("U"):
                tensors[f"{prefix}.{s}"] = rng.normal(0, scale, (d_hidden, d_hidden))
            else:
                tensors[f"{prefix}.{s}"] = np.zeros(d_hidden)

    gate_block("wgru_f", d_e, d_hw)
    gate_block("wgru_b", d_e, d_hw)
    gate_block("sgru_f", 2 * d_hw, d_hs)
    gate_block("sgru_b", 2 * d_hw, d_hs)

    tensors["attn_w.proj"] = rng.normal(0, scale, (2 * d_hw, d_aw))
    tensors["attn_w.bias"] = np.zeros(d_aw)
    tensors["attn_w.ctx"] = _context_init(rng, mode, n_labels, d_aw, scale,
                                          label_embeddings)
    tensors["attn_s.proj"] = rng.normal(0, scale, (2 * d_hs, d_as))
    tensors["attn_s.bias"] = np.zeros(d_as)
    tensors["attn_s.ctx"] = _context_init(rng, mode, n_labels, d_as, scale,
                                          label_embeddings)
    if label_embeddings is not None:
        tensors["out.W"] = _project_labels(rng, label_embeddings, labels, 2 * d_hs,
                                           scale)
    else:
        tensors["out.W"] = rng.normal(0, scale, (n_labels, 2 * d_hs))
    tensors["out.b"] = np.zeros(n_labels)

    params = ModelParams(
        mode=mode, labels=list(labels), d_e=d_e, d_hw=d_hw, d_hs=d_hs,
        d_aw=d_aw, d_as=d_as, tensors={k: tensors[k] for k in tensor_order(mode)},
    )
    params.validate()
    return params


def _context_init(rng, mode, n_labels, dim, scale, label_embeddings):
    if mode == MODE_HAN:
        return rng.normal(0, scale, dim)
    if label_embeddings is None:
        return rng.normal(0, scale, (n_labels, dim))
    return _project_labels(rng, label_embeddings, None, dim, scale)


def _project_labels(rng, label_embeddings, labels, dim, scale):
    emb = label_embeddings.matrix
    if labels is not None:
        rows = [label_embeddings.labels.index(code) for code in labels]
        emb = emb[rows]
    proj = rng.normal(0, 1.0 / np.sqrt(emb.shape[1]), (emb.shape[1], dim))
    out = emb @ proj
    norm = np.abs(out).max()
    return out * (scale / norm) if norm > 0 else out


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


def gru_step(x: np.ndarray, h_prev: np.ndarray, gates: dict[str, np.ndarray]):
    """One GRU update; vectorized over leading axes.

    z = sigma(W_z x + U_z h + b_z), r likewise,
    cand = tanh(W_h x + U_h (r*h) + b_h), new h = (1-z)*h + z*cand.
    """
    if x.shape[-1] != gates["W_z"].shape[0] or h_prev.shape[-1] != gates["U_z"].shape[0]:
        raise ModelError("gru_step dimension mismatch")
    z = sigmoid(x @ gates["W_z"] + h_prev @ gates["U_z"] + gates["b_z"])
    r = sigmoid(x @ gates["W_r"] + h_prev @ gates["U_r"] + gates["b_r"])
    cand = np.tanh(x @ gates["W_h"] + (r * h_prev) @ gates["U_h"] + gates["b_h"])
    h = (1.0 - z) * h_prev + z * cand
    return h, (z, r, cand)


def masked_softmax(scores: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    """Softmax over real positions; padding gets exactly 0; empty groups stay 0.

    Max subtraction keeps long-document logits from overflowing.
    """
    neg = np.where(mask > 0, scores, -np.inf)
    peak = np.max(neg, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    expd = np.exp(neg - peak)
    expd = np.where(mask > 0, expd, 0.0)
    total = expd.sum(axis=axis, keepdims=True)
    return np.divide(expd, total, out=np.zeros_like(expd), where=total > 0)


def attend(
    states: np.ndarray,
    projection: np.ndarray,
    bias: np.ndarray,
    context_row: np.ndarray,
    mask: np.ndarray,
):
    """Project-tanh-score-softmax-pool over one sequence of hidden states."""
    if not (mask > 0).any():
        raise ModelError("attend requires at least one real position")
    u = np.tanh(states @ projection + bias)
    scores = u @ context_row
    weights = masked_softmax(scores, mask, axis=-1)
    pooled = weights @ states
    return weights, pooled


# ---------------------------------------------------------------------------
# Batched forward
# ---------------------------------------------------------------------------


def doc_arrays(docs: list[TokenizedDocument]):
    """Stack documents into (B,S,T) ids plus word/sentence masks."""
    grids = np.stack([d.grid for d in docs]).astype(np.int64)
    b, s_max, t_max = grids.shape
    mask_w = np.zeros((b, s_max, t_max), dtype=np.float64)
    mask_s = np.zeros((b, s_max), dtype=np.float64)
    for i, doc in enumerate(docs):
        for s, length in enumerate(doc.sentence_lengths):
            mask_w[i, s, :length] = 1.0
            if length:
                mask_s[i, s] = 1.0
    return grids, mask_w, mask_s


def _gru_direction(x, mask, gates, reverse: bool):
    """Masked GRU over axis 1; padded steps pass the state through unchanged."""
    m, t_len, _ = x.shape
    d_h = gates["b_z"].shape[0]
    h = np.zeros((m, d_h))
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    hs = np.zeros((m, t_len, d_h))
    cache = {k: np.zeros((m, t_len, d_h)) for k in ("z", "r", "cand", "h_prev")}
    for t in order:
        new_h, (z, r, cand) = gru_step(x[:, t], h, gates)
        mt = mask[:, t][:, None]
        cache["z"][:, t], cache["r"][:, t], cache["cand"][:, t] = z, r, cand
        cache["h_prev"][:, t] = h
        h = mt * new_h + (1.0 - mt) * h
        hs[:, t] = h
    return hs, cache


def bi_gru(x, mask, gates_f, gates_b):
    hf, cache_f = _gru_direction(x, mask, gates_f, reverse=False)
    hb, cache_b = _gru_direction(x, mask, gates_b, reverse=True)
    return np.concatenate([hf, hb], axis=-1), cache_f, cache_b


def forward_batch(
    params: ModelParams,
    ids: np.ndarray,
    mask_w: np.ndarray,
    mask_s: np.ndarray,
    dropout_mask: np.ndarray | None = None,
):
    """Probabilities plus the full activation cache for the backward pass.

    dropout_mask, when given, is an inverted-dropout multiplier applied to
    the sentence-level Bi-GRU outputs (the single dropout site).
    """
    t = params.tensors
    hlan = params.mode == MODE_HLAN
    b, s_max, t_max = ids.shape
    m = b * s_max

    x = t["embedding"][ids.reshape(m, t_max)]  # (M,T,E)
    mw = mask_w.reshape(m, t_max)

    h_w, wcache_f, wcache_b = bi_gru(x, mw, params.gates("wgru_f"), params.gates("wgru_b"))

    u_w = np.tanh(h_w @ t["attn_w.proj"] + t["attn_w.bias"])  # (M,T,Aw)
    if hlan:
        scores_w = u_w @ t["attn_w.ctx"].T  # (M,T,L)
        alpha_w = masked_softmax(scores_w, mw[:, :, None], axis=1)
        sent_label = np.einsum("mtl,mtd->mld", alpha_w, h_w)  # (M,L,2Hw)
        sent_shared = sent_label.mean(axis=1)  # (M,2Hw)
    else:
        scores_w = u_w @ t["attn_w.ctx"]  # (M,T)
        alpha_w = masked_softmax(scores_w, mw, axis=1)
        sent_label = None
        sent_shared = np.einsum("mt,mtd->md", alpha_w, h_w)

    sent_seq = sent_shared.reshape(b, s_max, -1)  # (B,S,2Hw)

    g, scache_f, scache_b = bi_gru(sent_seq, mask_s, params.gates("sgru_f"),
                                   params.gates("sgru_b"))
    g_d = g if dropout_mask is None else g * dropout_mask

    u_s = np.tanh(g_d @ t["attn_s.proj"] + t["attn_s.bias"])  # (B,S,As)
    if hlan:
        scores_s = u_s @ t["attn_s.ctx"].T  # (B,S,L)
        alpha_s = masked_softmax(scores_s, mask_s[:, :, None], axis=1)
        doc_repr = np.einsum("bsl,bsd->bld", alpha_s, g_d)  # (B,L,2Hs)
        logits = np.einsum("bld,ld->bl", doc_repr, t["out.W"]) + t["out.b"]
    else:
        scores_s = u_s @ t["attn_s.ctx"]  # (B,S)
        alpha_s = masked_softmax(scores_s, mask_s, axis=1)
        doc_repr = np.einsum("bs,bsd->bd", alpha_s, g_d)  # (B,2Hs)
        logits = doc_repr @ t["out.W"].T + t["out.b"]

    probs = sigmoid(logits)
    cache = {
        "ids": ids, "mask_w": mask_w, "mask_s": mask_s, "x": x,
        "h_w": h_w, "wcache_f": wcache_f, "wcache_b": wcache_b,
        "u_w": u_w, "alpha_w": alpha_w, "sent_label": sent_label,
        "sent_seq": sent_seq, "g": g, "g_d": g_d,
        "dropout_mask": dropout_mask, "scache_f": scache_f, "scache_b": scache_b,
        "u_s": u_s, "alpha_s": alpha_s, "doc_repr": doc_repr,
        "logits": logits, "probs": probs,
    }
    return probs, cache


# ---------------------------------------------------------------------------
# Single-document inference
# ---------------------------------------------------------------------------


@dataclass
class AttentionMap:
    """Word/sentence softmax weights; leading label axis only in HLAN mode."""

    mode: str
    word_scores: np.ndarray  # HLAN (L,S,T) / HAN (S,T)
    sentence_scores: np.ndarray  # HLAN (L,S) / HAN (S,)

    def for_label(self, label_index: int | None):
        if self.mode == MODE_HLAN:
            if label_index is None:
                raise ModelError("HLAN attention maps are per label")
            return self.word_scores[label_index], self.sentence_scores[label_index]
        return self.word_scores, self.sentence_scores


@dataclass
class PredictionSet:
    labels: list[str]
    probabilities: np.ndarray  # (L,) in (0,1)
    threshold: float
    ranked: list[str] = field(init=False)

    def __post_init__(self):
        order = sorted(
            range(len(self.labels)),
            key=lambda i: (-self.probabilities[i], self.labels[i]),
        )
        self.ranked = [self.labels[i] for i in order]

    def probability(self, code: str) -> float:
        return float(self.probabilities[self.labels.index(code)])


def forward(
    doc: TokenizedDocument, params: ModelParams, threshold: float = 0.5
) -> tuple[PredictionSet, AttentionMap]:
    """Inference on one document; dropout off, deterministic."""
    params.validate()
    if doc.grid.max(initial=0) >= params.tensors["embedding"].shape[0]:
        raise ModelError("document ids exceed the embedding table")
    ids, mask_w, mask_s = doc_arrays([doc])
    probs, cache = forward_batch(params, ids, mask_w, mask_s)

    b, s_max, t_max = ids.shape
    if params.mode == MODE_HLAN:
        word = cache["alpha_w"].reshape(b, s_max, t_max, -1)[0].transpose(2, 0, 1)
        sent = cache["alpha_s"][0].T  # (L,S)
    else:
        word = cache["alpha_w"].reshape(b, s_max, t_max)[0]
        sent = cache["alpha_s"][0]

    probabilities = np.clip(probs[0], _PROB_EPS, 1.0 - _PROB_EPS)
    pred = PredictionSet(labels=params.labels, probabilities=probabilities,
                         threshold=threshold)
    att = AttentionMap(mode=params.mode, word_scores=word, sentence_scores=sent)
    return pred, att


def predict_codes(
    pred: PredictionSet, threshold: float | None = None, k: int | None = None
) -> list[str]:
    """Thresholded codes in ranking order, or exactly the top-k when k given."""
    if k is not None:
        return pred.ranked[:k]
    cut = pred.threshold if threshold is None else threshold
    if not 0 < cut < 1:
        raise ModelError("threshold must be in (0, 1)")
    return [c for c in pred.ranked if pred.probability(c) >= cut]
