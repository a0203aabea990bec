import hashlib
import math

import numpy as np
import pytest

from medcoder.backprop import loss_and_gradients
from medcoder.corpus import LabeledNote
from medcoder.han import MODE_HAN, MODE_HLAN, forward, init_params
from medcoder.text_pipeline import EmbeddingTable, Vocabulary, build_vocab, structure_document
from medcoder.trainer import (
    AdamState,
    Checkpoint,
    TrainConfig,
    TrainerError,
    adam_step,
    grad_check,
    multi_hot,
    train,
)


def tiny_setup(n_labels=2, mode=MODE_HLAN, seed=0, d_e=4, d_hw=3, d_hs=3):
    words = ["alpha", "beta", "gamma", "delta"]
    vocab = build_vocab([LabeledNote(0, 0, " ".join(words), ["x"])])
    rng = np.random.default_rng(seed)
    emb = EmbeddingTable(matrix=rng.normal(0, 0.2, (len(vocab), d_e)))
    emb.matrix[0] = 0.0
    labels = [f"L{i}" for i in range(n_labels)]
    params = init_params(emb, labels, mode=mode, d_hw=d_hw, d_hs=d_hs, seed=seed)
    doc = structure_document(LabeledNote(0, 0, "alpha beta gamma", ["x"]),
                             vocab, s_max=2, t_max=2)
    return vocab, params, doc


class TestLoss:
    def test_ln2_at_even_odds(self):
        _, params, doc = tiny_setup(n_labels=1)
        # zero the whole output path: logits collapse to the zero bias
        params.tensors["out.W"][:] = 0.0
        params.tensors["out.b"][:] = 0.0
        loss, _ = loss_and_gradients(params, [doc], np.array([[1.0]]))
        assert abs(loss - math.log(2)) < 1e-12

    def test_clamp_keeps_saturated_loss_finite(self):
        _, params, doc = tiny_setup(n_labels=1)
        params.tensors["out.b"][:] = 50.0  # p == 1.0 in float64
        loss_hit, _ = loss_and_gradients(params, [doc], np.array([[1.0]]))
        assert 0 <= loss_hit < 1e-6
        loss_miss, _ = loss_and_gradients(params, [doc], np.array([[0.0]]))
        assert math.isfinite(loss_miss)
        assert abs(loss_miss - (-math.log(1e-7))) < 1e-9

    def test_l2_skips_biases_and_padding_row(self):
        _, params, doc = tiny_setup(n_labels=2)
        target = np.array([[1.0, 0.0]])
        lam = 0.05
        _, g0 = loss_and_gradients(params, [doc], target, l2_lambda=0.0)
        _, g1 = loss_and_gradients(params, [doc], target, l2_lambda=lam)
        for name, t in params.tensors.items():
            if name.split(".")[-1].startswith("b"):
                np.testing.assert_array_equal(g0[name], g1[name])
            elif name == "embedding":
                np.testing.assert_array_equal(g1[name][0], np.zeros(t.shape[1]))
                np.testing.assert_allclose(
                    g1[name][1:] - g0[name][1:], 2 * lam * t[1:], atol=1e-12
                )
            else:
                np.testing.assert_allclose(g1[name] - g0[name], 2 * lam * t,
                                           atol=1e-12)

    def test_loss_nonnegative_and_reproducible_without_dropout(self):
        _, params, doc = tiny_setup(n_labels=2)
        target = np.array([[0.0, 1.0]])
        l1, _ = loss_and_gradients(params, [doc], target, l2_lambda=1e-3)
        l2, _ = loss_and_gradients(params, [doc], target, l2_lambda=1e-3)
        assert l1 == l2
        assert l1 >= 0

    def test_dropout_draws_from_rng(self):
        _, params, doc = tiny_setup(n_labels=2)
        target = np.array([[0.0, 1.0]])
        la, _ = loss_and_gradients(params, [doc], target, dropout_rate=0.5,
                                   rng=np.random.default_rng(3))
        lb, _ = loss_and_gradients(params, [doc], target, dropout_rate=0.5,
                                   rng=np.random.default_rng(3))
        assert la == lb
        with pytest.raises(ValueError):
            loss_and_gradients(params, [doc], target, dropout_rate=0.5)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        _, params, _ = tiny_setup()
        grads = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        grads["out.W"][:] = np.where(
            np.arange(params.tensors["out.W"].size).reshape(params.tensors["out.W"].shape) % 2,
            0.3, -0.7,
        )
        before = params.tensors["out.W"].copy()
        untouched = params.tensors["attn_w.proj"].copy()
        state = AdamState.for_params(params)
        adam_step(params, grads, state, lr=0.01)
        step = before - params.tensors["out.W"]
        np.testing.assert_allclose(step, 0.01 * np.sign(grads["out.W"]), rtol=1e-6)
        np.testing.assert_array_equal(params.tensors["attn_w.proj"], untouched)

    def test_two_steps_match_hand_recurrence(self):
        _, params, _ = tiny_setup()
        g = 0.37
        lr = 0.05
        theta = params.tensors["out.b"][0]
        grads = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        grads["out.b"][0] = g
        state = AdamState.for_params(params)
        adam_step(params, grads, state, lr)
        adam_step(params, grads, state, lr)

        m = v = 0.0
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert abs(params.tensors["out.b"][0] - theta) < 1e-12

    def test_non_finite_gradient_names_tensor(self):
        _, params, _ = tiny_setup()
        grads = {k: np.zeros_like(t) for k, t in params.tensors.items()}
        grads["attn_s.proj"][0, 0] = np.nan
        state = AdamState.for_params(params)
        with pytest.raises(TrainerError, match="attn_s.proj"):
            adam_step(params, grads, state, lr=0.01)


class TestGradCheck:
    def test_toy_hlan_under_tolerance(self):
        _, params, doc = tiny_setup(n_labels=3, mode=MODE_HLAN)
        target = multi_hot(["L0", "L2"], params.labels)
        err = grad_check(params, doc, target, eps=1e-4, n_samples=500)
        assert err < 1e-4

    def test_toy_han_under_tolerance(self):
        _, params, doc = tiny_setup(n_labels=3, mode=MODE_HAN, seed=6)
        target = multi_hot(["L1"], params.labels)
        err = grad_check(params, doc, target, eps=1e-4, n_samples=500)
        assert err < 1e-4

    def test_bias_coordinate_is_linear(self):
        _, params, doc = tiny_setup(n_labels=1)
        params.tensors["out.W"][:] = 0.0
        params.tensors["out.b"][:] = 0.0
        target = np.array([1.0])
        eps = 1e-4
        loss0, grads = loss_and_gradients(params, [doc], target[None, :])
        params.tensors["out.b"][0] = eps
        lp, _ = loss_and_gradients(params, [doc], target[None, :])
        params.tensors["out.b"][0] = -eps
        lm, _ = loss_and_gradients(params, [doc], target[None, :])
        params.tensors["out.b"][0] = 0.0
        numeric = (lp - lm) / (2 * eps)
        assert abs(numeric - grads["out.b"][0]) < 1e-8

    def test_fault_injection_detected(self):
        _, params, doc = tiny_setup(n_labels=2)
        target = multi_hot(["L0"], params.labels)
        err = grad_check(params, doc, target, n_samples=120,
                         corrupt_tensor=("out.W", 2.0))
        assert err > 0.3

    def test_mixed_batch_with_all_padding_document(self):
        vocab, params, doc = tiny_setup(n_labels=2)
        empty = structure_document(LabeledNote(0, 0, "", ["x"]), vocab,
                                   s_max=2, t_max=2)
        targets = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, grads = loss_and_gradients(params, [doc, empty], targets)
        assert math.isfinite(loss)
        eps = 1e-5
        rng = np.random.default_rng(0)
        for name in ("out.b", "sgru_f.W_z", "attn_w.ctx", "embedding"):
            flat = params.tensors[name].reshape(-1)
            # perturb past row 0 for the embedding (frozen padding row)
            low = params.tensors[name].shape[-1] if name == "embedding" else 0
            i = int(rng.integers(low, flat.size))
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_gradients(params, [doc, empty], targets)
            flat[i] = orig - eps
            lm, _ = loss_and_gradients(params, [doc, empty], targets)
            flat[i] = orig
            numeric = (lp - lm) / (2 * eps)
            analytic = grads[name].reshape(-1)[i]
            assert abs(numeric - analytic) < 1e-7

    def test_scale_guard(self):
        vocab = build_vocab(
            [LabeledNote(0, 0, " ".join(f"w{i}" for i in range(200)), ["x"])]
        )
        emb = EmbeddingTable(matrix=np.zeros((len(vocab), 64)))
        params = init_params(emb, ["A"], d_hw=16, d_hs=16, seed=0)
        doc = structure_document(LabeledNote(0, 0, "w1", ["x"]), vocab, 1, 1)
        with pytest.raises(TrainerError):
            grad_check(params, doc, np.array([1.0]))


def overfit_corpus(n_docs=12, n_labels=3, seed=0):
    rng = np.random.default_rng(seed)
    notes = []
    for i in range(n_docs):
        chosen = sorted(rng.choice(n_labels, size=rng.integers(1, 3),
                                   replace=False))
        tokens = []
        for c in chosen:
            tokens += [f"marker{c}"] * 3
        tokens += [rng.choice(["filler", "pad", "note"]) for _ in range(4)]
        rng.shuffle(tokens)
        notes.append(LabeledNote(i, i, " ".join(tokens),
                                 [f"L{c}" for c in chosen]))
    return notes


class TestTrain:
    def config(self, **kw):
        base = dict(learning_rate=0.01, dropout_rate=0.0, l2_lambda=0.0,
                    batch_size=4, epochs=25, seed=1, mode=MODE_HLAN,
                    d_hw=6, d_hs=6, s_max=3, t_max=6)
        base.update(kw)
        return TrainConfig(**base)

    def test_loss_drops_while_fitting(self):
        notes = overfit_corpus()
        vocab = build_vocab(notes)
        rng = np.random.default_rng(2)
        emb = EmbeddingTable(matrix=rng.normal(0, 0.2, (len(vocab), 6)))
        emb.matrix[0] = 0.0
        config = self.config()
        ckpt = train(notes, config, vocab, emb)

        docs = [structure_document(n, vocab, config.s_max, config.t_max)
                for n in notes]
        targets = np.stack([multi_hot(n.labels, ckpt.labels) for n in notes])
        final, _ = loss_and_gradients(ckpt.params, docs, targets)

        init = train(notes, self.config(epochs=0), vocab, emb)
        start, _ = loss_and_gradients(init.params, docs, targets)
        assert final < 0.5 * start

    def test_zero_epochs_returns_initialization(self):
        notes = overfit_corpus()
        vocab = build_vocab(notes)
        emb = EmbeddingTable(matrix=np.zeros((len(vocab), 6)))
        a = train(notes, self.config(epochs=0), vocab, emb)
        b = init_params(emb, a.labels, mode=MODE_HLAN, d_hw=6, d_hs=6, seed=1)
        for name, t in a.params.tensors.items():
            np.testing.assert_array_equal(t, b.tensors[name])

    def test_same_seed_identical_checkpoint_bytes(self, tmp_path):
        notes = overfit_corpus()
        vocab = build_vocab(notes)
        rng = np.random.default_rng(5)
        emb = EmbeddingTable(matrix=rng.normal(0, 0.2, (len(vocab), 6)))
        emb.matrix[0] = 0.0
        config = self.config(epochs=3, dropout_rate=0.2)
        for name in ("a.ckpt", "b.ckpt"):
            train(notes, config, vocab, emb).save(tmp_path / name)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_embedding_padding_row_frozen_through_training(self):
        notes = overfit_corpus()
        vocab = build_vocab(notes)
        rng = np.random.default_rng(8)
        emb = EmbeddingTable(matrix=rng.normal(0, 0.2, (len(vocab), 6)))
        emb.matrix[0] = 0.0
        ckpt = train(notes, self.config(epochs=4, l2_lambda=1e-3), vocab, emb)
        trained = ckpt.params.tensors["embedding"]
        assert (trained[0] == 0.0).all()
        assert not np.array_equal(trained[2:], emb.matrix[2:])

    def test_label_embedding_init_changes_start(self):
        from medcoder.skipgram import train_label_embeddings

        notes = overfit_corpus()
        vocab = build_vocab(notes)
        emb = EmbeddingTable(matrix=np.zeros((len(vocab), 6)))
        label_emb = train_label_embeddings(notes, dim=5, epochs=5, seed=1)
        plain = train(notes, self.config(epochs=0), vocab, emb)
        seeded = train(notes, self.config(epochs=0, use_label_embedding_init=True),
                       vocab, emb, label_embeddings=label_emb)
        assert not np.array_equal(plain.params.tensors["attn_w.ctx"],
                                  seeded.params.tensors["attn_w.ctx"])
        assert not np.array_equal(plain.params.tensors["out.W"],
                                  seeded.params.tensors["out.W"])


class TestCheckpoint:
    def test_round_trip_bit_identical_forward(self, tmp_path):
        notes = overfit_corpus()
        vocab = build_vocab(notes)
        rng = np.random.default_rng(9)
        emb = EmbeddingTable(matrix=rng.normal(0, 0.2, (len(vocab), 6)))
        emb.matrix[0] = 0.0
        config = TrainConfig(epochs=2, dropout_rate=0.0, batch_size=4,
                             d_hw=4, d_hs=4, s_max=3, t_max=6, seed=2)
        ckpt = train(notes, config, vocab, emb)
        path = tmp_path / "model.ckpt"
        ckpt.save(path)
        loaded = Checkpoint.load(path)

        doc = structure_document(notes[0], vocab, config.s_max, config.t_max)
        before, _ = forward(doc, ckpt.params)
        after, _ = forward(doc, loaded.params)
        assert (before.probabilities == after.probabilities).all()
        assert loaded.labels == ckpt.labels
        assert loaded.config == ckpt.config
        assert loaded.vocab.token_to_id == vocab.token_to_id

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"MEDCKPT\n" + b'{"format_version":99,"tensors":[]}\n')
        with pytest.raises(TrainerError, match="version"):
            Checkpoint.load(path)

    def test_magic_check(self, tmp_path):
        path = tmp_path / "noise.bin"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(TrainerError, match="not a medcoder checkpoint"):
            Checkpoint.load(path)

    def test_golden_layout(self, tmp_path):
        # fixed, RNG-free construction pinned against a committed golden file
        from pathlib import Path

        vocab = Vocabulary(token_to_id={"<pad>": 0, "<unk>": 1, "ward": 2},
                           id_to_token=["<pad>", "<unk>", "ward"], min_count=1)
        emb = EmbeddingTable(
            matrix=np.arange(9, dtype=np.float64).reshape(3, 3) / 10.0
        )
        emb.matrix[0] = 0.0
        params = init_params(emb, ["428.0"], mode=MODE_HAN, d_hw=2, d_hs=2, seed=0)
        for i, name in enumerate(sorted(params.tensors)):
            t = params.tensors[name]
            params.tensors[name] = (
                np.linspace(-1.0, 1.0, t.size).reshape(t.shape) * (i + 1) / 10.0
            )
        params.tensors["embedding"][0] = 0.0
        config = TrainConfig(epochs=0, seed=0, mode=MODE_HAN, d_hw=2, d_hs=2,
                             s_max=2, t_max=2, dropout_rate=0.0)
        ckpt = Checkpoint(params=params, vocab=vocab, labels=["428.0"],
                          config=config)
        out = tmp_path / "golden.ckpt"
        ckpt.save(out)

        golden = Path(__file__).parent / "data" / "golden.ckpt"
        assert out.read_bytes() == golden.read_bytes()
        reloaded = Checkpoint.load(golden)
        assert reloaded.labels == ["428.0"]
