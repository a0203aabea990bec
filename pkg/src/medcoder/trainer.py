"""Training loop: Adam over BCE+L2, gradient verification, checkpoints.

Checkpoint container (format_version 1): magic line, one compact JSON
header line (mode, dims, labels, vocabulary, train config, tensor
manifest), then each tensor's raw little-endian float64 bytes in the
declared order. Same seed + data -> byte-identical file.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .backprop import loss_and_gradients
from .corpus import LabeledNote
from .han import MODE_HLAN, ModelParams, init_params, tensor_order
from .text_pipeline import (
    DEFAULT_S_MAX,
    DEFAULT_T_MAX,
    EmbeddingTable,
    LabelEmbeddings,
    TokenizedDocument,
    Vocabulary,
    structure_document,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MEDCKPT\n"
FORMAT_VERSION = 1


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    dropout_rate: float = 0.1
    l2_lambda: float = 1e-4
    batch_size: int = 8
    epochs: int = 10
    threshold: float = 0.5
    seed: int = 0
    mode: str = MODE_HLAN
    use_label_embedding_init: bool = False
    d_hw: int = 50
    d_hs: int = 50
    s_max: int = DEFAULT_S_MAX
    t_max: int = DEFAULT_T_MAX

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise TrainerError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be > 0")
        if self.l2_lambda < 0:
            raise TrainerError("l2_lambda must be >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
            **kwargs,
        )


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, in place on params and state."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainerError(f"non-finite gradient in tensor {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, theta in params.tensors.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g**2
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.tensors["embedding"][0] = 0.0
    return params, state


def multi_hot(labels: list[str], label_space: list[str]) -> np.ndarray:
    index = {code: i for i, code in enumerate(label_space)}
    vec = np.zeros(len(label_space))
    for code in labels:
        if code in index:
            vec[index[code]] = 1.0
    return vec


def train(
    train_set: list[LabeledNote],
    config: TrainConfig,
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    label_embeddings: LabelEmbeddings | None = None,
) -> "Checkpoint":
    """Seeded mini-batch training; returns the checkpoint (epochs=0 gives
    the untouched initialization)."""
    if not train_set:
        raise TrainerError("empty train set")
    label_space = sorted({code for note in train_set for code in note.labels})
    if not label_space:
        raise TrainerError("train set carries no labels")

    init_emb = label_embeddings if config.use_label_embedding_init else None
    params = init_params(
        embeddings, label_space, mode=config.mode,
        d_hw=config.d_hw, d_hs=config.d_hs, seed=config.seed,
        label_embeddings=init_emb,
    )
    docs = [structure_document(n, vocab, config.s_max, config.t_max)
            for n in train_set]
    targets = np.stack([multi_hot(n.labels, label_space) for n in train_set])

    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(params)
    n = len(docs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(
                params,
                [docs[i] for i in batch],
                targets[batch],
                l2_lambda=config.l2_lambda,
                dropout_rate=config.dropout_rate,
                rng=rng,
            )
            if not np.isfinite(loss):
                raise TrainerError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch {n_batches}"
                )
            params, state = adam_step(params, grads, state, config.learning_rate)
            epoch_loss += loss
            n_batches += 1
        logger.info("epoch %d mean loss %.6f", epoch, epoch_loss / n_batches)

    return Checkpoint(params=params, vocab=vocab, labels=label_space, config=config)


def grad_check(
    params: ModelParams,
    doc: TokenizedDocument,
    target: np.ndarray,
    eps: float = 1e-4,
    n_samples: int = 500,
    l2_lambda: float = 1e-4,
    seed: int = 0,
    corrupt_tensor: tuple[str, float] | None = None,
) -> float:
    """Max relative error, analytic vs central differences, dropout off.

    Samples at least n_samples coordinates, with every tensor represented.
    Relative error is |a-n| / max(|a|, |n|, 1e-6). corrupt_tensor is the
    fault-injection hook for harness self-tests: scales one analytic
    gradient tensor before comparison.
    """
    total = sum(t.size for t in params.tensors.values())
    if total > 5000:
        raise TrainerError(f"grad_check is a toy-scale tool ({total} params > 5000)")

    targets = target[None, :]
    analytic_loss, grads = loss_and_gradients(
        params, [doc], targets, l2_lambda=l2_lambda
    )
    if corrupt_tensor is not None:
        name, factor = corrupt_tensor
        grads[name] = grads[name] * factor

    rng = np.random.default_rng(seed)
    sizes = {name: t.size for name, t in params.tensors.items()}
    target = min(n_samples, total)
    quotas = {
        name: max(1, min(size, round(n_samples * size / total)))
        for name, size in sizes.items()
    }
    while sum(quotas.values()) < target:
        for name in quotas:
            if quotas[name] < sizes[name]:
                quotas[name] += 1
            if sum(quotas.values()) >= target:
                break

    worst = 0.0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        picks = rng.choice(sizes[name], size=quotas[name], replace=False)
        for i in picks:
            original = flat[i]
            flat[i] = original + eps
            plus, _ = loss_and_gradients(params, [doc], targets, l2_lambda=l2_lambda)
            flat[i] = original - eps
            minus, _ = loss_and_gradients(params, [doc], targets, l2_lambda=l2_lambda)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            analytic = grads[name].reshape(-1)[i]
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocabulary
    labels: list[str]
    config: TrainConfig
    format_version: int = FORMAT_VERSION

    def save(self, path) -> None:
        p = self.params
        header = {
            "format_version": self.format_version,
            "mode": p.mode,
            "labels": p.labels,
            "dims": {"d_e": p.d_e, "d_hw": p.d_hw, "d_hs": p.d_hs,
                     "d_aw": p.d_aw, "d_as": p.d_as},
            "vocab": {"id_to_token": self.vocab.id_to_token,
                      "min_count": self.vocab.min_count},
            "config": asdict(self.config),
            "tensors": [
                {"name": name, "shape": list(p.tensors[name].shape)}
                for name in tensor_order(p.mode)
            ],
        }
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(json.dumps(header, sort_keys=True,
                               separators=(",", ":")).encode() + b"\n")
            for name in tensor_order(p.mode):
                f.write(np.ascontiguousarray(p.tensors[name], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise TrainerError(f"{path}: not a medcoder checkpoint")
            header = json.loads(f.readline().decode())
            if header.get("format_version") != FORMAT_VERSION:
                raise TrainerError(
                    f"{path}: unsupported checkpoint version "
                    f"{header.get('format_version')}"
                )
            tensors: dict[str, np.ndarray] = {}
            for entry in header["tensors"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = f.read(count * 8)
                if len(raw) != count * 8:
                    raise TrainerError(f"{path}: truncated tensor {entry['name']}")
                tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        dims = header["dims"]
        params = ModelParams(
            mode=header["mode"], labels=list(header["labels"]),
            d_e=dims["d_e"], d_hw=dims["d_hw"], d_hs=dims["d_hs"],
            d_aw=dims["d_aw"], d_as=dims["d_as"], tensors=tensors,
        )
        params.validate()
        vocab_info = header["vocab"]
        vocab = Vocabulary(
            token_to_id={tok: i for i, tok in enumerate(vocab_info["id_to_token"])},
            id_to_token=list(vocab_info["id_to_token"]),
            min_count=vocab_info["min_count"],
        )
        config = TrainConfig(**header["config"])
        return cls(params=params, vocab=vocab, labels=list(header["labels"]),
                   config=config, format_version=header["format_version"])
