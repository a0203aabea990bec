"""Reverse-mode gradients through the attention network, plus the training
loss.

Loss: mean over documents of the label-summed binary cross-entropy, plus
l2_lambda * sum of squared entries over weight matrices (biases and the
padding embedding row excluded). Probabilities are clamped to
[1e-7, 1-1e-7] before the logs; the logit gradient uses the exact
sigmoid-BCE derivative (p - y), so saturation cannot produce non-finite
updates.

The backward pass mirrors forward_batch step by step over its cache; no
autodiff framework is involved, and gradients cover every trainable
tensor.
"""

from __future__ import annotations

import numpy as np

from .han import MODE_HLAN, GATE_SUFFIXES, ModelParams, doc_arrays, forward_batch
from .text_pipeline import TokenizedDocument

PROB_CLAMP = 1e-7


def zero_gradients(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors.items()}


def bce_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_doc = -(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)).sum(axis=1)
    return float(per_doc.mean())


def l2_penalty(params: ModelParams, l2_lambda: float) -> float:
    if l2_lambda == 0.0:
        return 0.0
    total = 0.0
    for name, t in params.tensors.items():
        if _l2_exempt(name):
            continue
        if name == "embedding":
            total += float((t[1:] ** 2).sum())
        else:
            total += float((t**2).sum())
    return l2_lambda * total


def _l2_exempt(name: str) -> bool:
    return name.split(".")[-1].startswith("b")


def make_dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted dropout multiplier: keep/(1-rate), drop to 0."""
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return keep / (1.0 - rate)


def loss_and_gradients(
    params: ModelParams,
    docs: list[TokenizedDocument],
    targets: np.ndarray,
    l2_lambda: float = 0.0,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Training loss and gradients for one mini-batch.

    targets: (B, |Y|) multi-hot. Dropout (single site, sentence-level
    Bi-GRU output) is applied only when a rate and rng are given.
    """
    if len(docs) != targets.shape[0]:
        raise ValueError("batch size mismatch between docs and targets")
    ids, mask_w, mask_s = doc_arrays(docs)

    dropout_mask = None
    if dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout requires an rng")
        shape = (ids.shape[0], ids.shape[1], 2 * params.d_hs)
        dropout_mask = make_dropout_mask(rng, shape, dropout_rate)

    probs, cache = forward_batch(params, ids, mask_w, mask_s, dropout_mask)
    loss = bce_loss(probs, targets) + l2_penalty(params, l2_lambda)

    dlogits = (probs - targets) / targets.shape[0]
    grads = backward(params, cache, dlogits)

    if l2_lambda > 0.0:
        for name, t in params.tensors.items():
            if _l2_exempt(name):
                continue
            grads[name] += 2.0 * l2_lambda * t
        grads["embedding"][0] = 0.0
    return loss, grads


def backward(params: ModelParams, cache: dict, dlogits: np.ndarray):
    """Gradients of sum(dlogits * logits) w.r.t. every trainable tensor."""
    t = params.tensors
    hlan = params.mode == MODE_HLAN
    grads = zero_gradients(params)

    g_d = cache["g_d"]
    alpha_s = cache["alpha_s"]
    u_s = cache["u_s"]

    # output layer
    if hlan:
        doc_repr = cache["doc_repr"]  # (B,L,2Hs)
        grads["out.W"] += np.einsum("bl,bld->ld", dlogits, doc_repr)
        grads["out.b"] += dlogits.sum(axis=0)
        d_doc = dlogits[:, :, None] * t["out.W"][None, :, :]  # (B,L,2Hs)
        # sentence attention
        d_alpha_s = np.einsum("bld,bsd->bsl", d_doc, g_d)
        d_gd = np.einsum("bsl,bld->bsd", alpha_s, d_doc)
        ds_s = _softmax_backward(alpha_s, d_alpha_s, axis=1)
        d_us = np.einsum("bsl,la->bsa", ds_s, t["attn_s.ctx"])
        grads["attn_s.ctx"] += np.einsum("bsl,bsa->la", ds_s, u_s)
    else:
        doc_repr = cache["doc_repr"]  # (B,2Hs)
        grads["out.W"] += np.einsum("bl,bd->ld", dlogits, doc_repr)
        grads["out.b"] += dlogits.sum(axis=0)
        d_doc = dlogits @ t["out.W"]  # (B,2Hs)
        d_alpha_s = np.einsum("bd,bsd->bs", d_doc, g_d)
        d_gd = alpha_s[:, :, None] * d_doc[:, None, :]
        ds_s = _softmax_backward(alpha_s, d_alpha_s, axis=1)
        d_us = ds_s[:, :, None] * t["attn_s.ctx"][None, None, :]
        grads["attn_s.ctx"] += np.einsum("bs,bsa->a", ds_s, u_s)

    dpre_s = d_us * (1.0 - u_s**2)
    grads["attn_s.proj"] += np.einsum("bsd,bsa->da", g_d, dpre_s)
    grads["attn_s.bias"] += dpre_s.sum(axis=(0, 1))
    d_gd += dpre_s @ t["attn_s.proj"].T

    dg = d_gd if cache["dropout_mask"] is None else d_gd * cache["dropout_mask"]

    # sentence-level Bi-GRU
    d_hs = params.d_hs
    d_sent = np.zeros_like(cache["sent_seq"])
    d_sent += _gru_direction_backward(
        cache["sent_seq"], cache["mask_s"], params.gates("sgru_f"),
        cache["scache_f"], dg[..., :d_hs], reverse=False,
        grads=grads, prefix="sgru_f",
    )
    d_sent += _gru_direction_backward(
        cache["sent_seq"], cache["mask_s"], params.gates("sgru_b"),
        cache["scache_b"], dg[..., d_hs:], reverse=True,
        grads=grads, prefix="sgru_b",
    )

    # word attention
    b, s_max = cache["mask_s"].shape
    m = b * s_max
    d_shared = d_sent.reshape(m, -1)  # (M,2Hw)
    h_w = cache["h_w"]
    alpha_w = cache["alpha_w"]
    u_w = cache["u_w"]
    mw = cache["mask_w"].reshape(m, -1)

    if hlan:
        n_labels = params.n_labels
        d_sent_label = np.repeat(d_shared[:, None, :], n_labels, axis=1) / n_labels
        d_alpha_w = np.einsum("mld,mtd->mtl", d_sent_label, h_w)
        dh_w = np.einsum("mtl,mld->mtd", alpha_w, d_sent_label)
        ds_w = _softmax_backward(alpha_w, d_alpha_w, axis=1)
        d_uw = np.einsum("mtl,la->mta", ds_w, t["attn_w.ctx"])
        grads["attn_w.ctx"] += np.einsum("mtl,mta->la", ds_w, u_w)
    else:
        d_alpha_w = np.einsum("md,mtd->mt", d_shared, h_w)
        dh_w = alpha_w[:, :, None] * d_shared[:, None, :]
        ds_w = _softmax_backward(alpha_w, d_alpha_w, axis=1)
        d_uw = ds_w[:, :, None] * t["attn_w.ctx"][None, None, :]
        grads["attn_w.ctx"] += np.einsum("mt,mta->a", ds_w, u_w)

    dpre_w = d_uw * (1.0 - u_w**2)
    grads["attn_w.proj"] += np.einsum("mtd,mta->da", h_w, dpre_w)
    grads["attn_w.bias"] += dpre_w.sum(axis=(0, 1))
    dh_w += dpre_w @ t["attn_w.proj"].T

    # word-level Bi-GRU
    d_hw = params.d_hw
    x = cache["x"]
    dx = np.zeros_like(x)
    dx += _gru_direction_backward(
        x, mw, params.gates("wgru_f"), cache["wcache_f"], dh_w[..., :d_hw],
        reverse=False, grads=grads, prefix="wgru_f",
    )
    dx += _gru_direction_backward(
        x, mw, params.gates("wgru_b"), cache["wcache_b"], dh_w[..., d_hw:],
        reverse=True, grads=grads, prefix="wgru_b",
    )

    # embedding scatter; padding row stays frozen
    flat_ids = cache["ids"].reshape(-1)
    np.add.at(grads["embedding"], flat_ids, dx.reshape(len(flat_ids), -1))
    grads["embedding"][0] = 0.0
    return grads


def _softmax_backward(alpha: np.ndarray, d_alpha: np.ndarray, axis: int):
    inner = (alpha * d_alpha).sum(axis=axis, keepdims=True)
    return alpha * (d_alpha - inner)


def _gru_direction_backward(x, mask, gates, cache, d_hs_dir, reverse, grads, prefix):
    """Backprop through one masked GRU direction; accumulates gate grads."""
    m, t_len, _ = x.shape
    dx = np.zeros_like(x)
    carry = np.zeros((m, gates["b_z"].shape[0]))
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t_idx in reversed(list(order)):
        dh = d_hs_dir[:, t_idx] + carry
        mt = mask[:, t_idx][:, None]
        d_new = mt * dh
        carry = (1.0 - mt) * dh

        z = cache["z"][:, t_idx]
        r = cache["r"][:, t_idx]
        cand = cache["cand"][:, t_idx]
        h_prev = cache["h_prev"][:, t_idx]
        xt = x[:, t_idx]

        dz = d_new * (cand - h_prev)
        dcand = d_new * z
        dh_prev = d_new * (1.0 - z)

        dcand_pre = dcand * (1.0 - cand**2)
        grads[f"{prefix}.W_h"] += xt.T @ dcand_pre
        grads[f"{prefix}.U_h"] += (r * h_prev).T @ dcand_pre
        grads[f"{prefix}.b_h"] += dcand_pre.sum(axis=0)
        drh = dcand_pre @ gates["U_h"].T
        dr = drh * h_prev
        dh_prev += drh * r

        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        grads[f"{prefix}.W_z"] += xt.T @ dz_pre
        grads[f"{prefix}.U_z"] += h_prev.T @ dz_pre
        grads[f"{prefix}.b_z"] += dz_pre.sum(axis=0)
        grads[f"{prefix}.W_r"] += xt.T @ dr_pre
        grads[f"{prefix}.U_r"] += h_prev.T @ dr_pre
        grads[f"{prefix}.b_r"] += dr_pre.sum(axis=0)

        dx[:, t_idx] = (
            dz_pre @ gates["W_z"].T
            + dr_pre @ gates["W_r"].T
            + dcand_pre @ gates["W_h"].T
        )
        dh_prev += dz_pre @ gates["U_z"].T + dr_pre @ gates["U_r"].T
        carry += dh_prev
    return dx
