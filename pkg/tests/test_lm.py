"""Byte-level LM pipeline: tokenization, corpus splits, pretraining."""

import math
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtlab import lm
from dtlab.checkpoint import load_checkpoint
from dtlab.tensor import Tensor, no_grad
from dtlab.transformer import TransformerConfig, TransformerModel


def tiny_config(**kw):
    base = dict(
        model_dim=32,
        num_heads=2,
        num_layers=1,
        max_positions=64,
        vocab_size=256,
        dropout=0.0,
        activation="relu",
    )
    base.update(kw)
    return TransformerConfig(**base)


# tokenization ---------------------------------------------------------------


def test_tokenize_known_bytes():
    assert lm.tokenize("hi").tolist() == [104, 105]
    assert lm.tokenize(b"\x00\xff").tolist() == [0, 255]


def test_round_trip_bytes():
    data = bytes(range(256))
    assert lm.detokenize(lm.tokenize(data)) == data


@settings(max_examples=50, deadline=None)
@given(st.text())
def test_round_trip_any_text(s):
    assert lm.detokenize(lm.tokenize(s)) == s.encode("utf-8")


def test_detokenize_rejects_out_of_range():
    with pytest.raises(ValueError):
        lm.detokenize(np.array([0, 256]))
    with pytest.raises(ValueError):
        lm.detokenize(np.array([-1]))


def test_bits_per_byte_conversion():
    # ln(256) nats per byte is exactly 8 bits per byte
    assert lm.bits_per_byte(math.log(256.0)) == pytest.approx(8.0, abs=1e-12)


def test_unigram_entropy_matches_counter_oracle():
    data = b"abracadabra" * 7 + b"zzz"
    tokens = lm.tokenize(data)
    counts = Counter(data)
    total = len(data)
    expected = -sum(
        (c / total) * math.log2(c / total) for c in counts.values()
    )
    assert lm.unigram_entropy_bits(tokens) == pytest.approx(expected, abs=1e-12)


# corpus ----------------------------------------------------------------------


def test_split_accounting_and_order():
    data = bytes(i % 256 for i in range(100))
    corpus = lm.Corpus(data, val_fraction=0.1)
    assert len(corpus.train_tokens) + len(corpus.val_tokens) == 100
    assert len(corpus.val_tokens) == 10
    # ordered, disjoint: validation is the final slice
    joined = np.concatenate([corpus.train_tokens, corpus.val_tokens])
    assert np.array_equal(joined, lm.tokenize(data))


def test_sample_windows_stay_in_train_region(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("ab" * 300 + "Z" * 60)  # Z only in the val tail
    corpus = lm.Corpus.from_file(path, val_fraction=0.1)
    rng = np.random.default_rng(0)
    windows = lm.Corpus.sample_windows(corpus, rng, 64, 8)
    assert windows.shape == (64, 9)
    assert ord("Z") not in windows


def test_bundled_corpus_loads():
    corpus = lm.Corpus.bundled()
    total = len(corpus.train_tokens) + len(corpus.val_tokens)
    assert total > 1_000_000
    assert corpus.train_tokens.min() >= 0 and corpus.train_tokens.max() <= 255


# loss ------------------------------------------------------------------------


def test_fresh_model_loss_near_uniform():
    """0.02-scale init gives near-uniform logits, so CE ≈ ln 256."""
    model = TransformerModel(tiny_config(), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    windows = rng.integers(0, 256, size=(4, 17))
    with no_grad():
        loss = lm.lm_loss(model, windows)
    assert abs(float(loss.data) - math.log(256.0)) < 0.05


def test_lm_loss_rejects_one_token_window():
    model = TransformerModel(tiny_config(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        lm.lm_loss(model, np.array([[5]]))


def test_overfit_sixteen_bytes():
    """A tiny model memorizes a 16-byte corpus to loss < 0.05."""
    data = b"the cat sat on a"
    assert len(data) == 16
    tokens = lm.tokenize(data)
    model = TransformerModel(tiny_config(model_dim=64), np.random.default_rng(0))
    from dtlab.optim import AdamW

    opt = AdamW(model.parameters(), lr=3e-3, warmup_steps=10, weight_decay=0.0)
    window = tokens[None, :]
    loss = None
    for _ in range(400):
        opt.zero_grad()
        loss = lm.lm_loss(model, window)
        loss.backward()
        opt.step()
        if float(loss.data) < 0.04:
            break
    assert float(loss.data) < 0.05


def test_short_pretrain_decreases_loss(tmp_path):
    cfg = lm.PretrainConfig(
        model=tiny_config(),
        steps=60,
        batch_tokens=256,
        window_len=32,
        lr=3e-3,
        warmup_steps=5,
        eval_every=30,
        eval_windows=4,
        seed=0,
    )
    corpus = lm.Corpus(lm.tokenize(b"hello world. " * 200), val_fraction=0.1)
    result = lm.pretrain(cfg, corpus, tmp_path)
    first = result.train_losses[0]
    last = float(np.mean(result.train_losses[-10:]))
    assert last < first


# determinism and checkpoints ---------------------------------------------------


def test_pretrain_metrics_byte_identical(tmp_path):
    def run(out):
        cfg = lm.PretrainConfig(
            model=tiny_config(),
            steps=12,
            batch_tokens=128,
            window_len=16,
            warmup_steps=4,
            eval_every=6,
            eval_windows=2,
            seed=7,
        )
        corpus = lm.Corpus(lm.tokenize(b"determinism " * 300), val_fraction=0.1)
        return lm.pretrain(cfg, corpus, out)

    a = run(tmp_path / "a")
    b = run(tmp_path / "b")
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()


def test_checkpoint_round_trip_preserves_forward(tmp_path):
    cfg = lm.PretrainConfig(
        model=tiny_config(),
        steps=8,
        batch_tokens=128,
        window_len=16,
        warmup_steps=2,
        eval_every=8,
        eval_windows=2,
        seed=3,
    )
    corpus = lm.Corpus(lm.tokenize(b"round trip " * 300), val_fraction=0.1)
    result = lm.pretrain(cfg, corpus, tmp_path)

    restored = lm.model_from_checkpoint(load_checkpoint(result.checkpoint_path))
    tokens = np.arange(16)[None, :] % 256
    with no_grad():
        a = result.model.forward(tokens)
        b = restored.forward(tokens)
    assert np.array_equal(a.data, b.data)


def test_validation_bpb_positive():
    corpus = lm.Corpus(lm.tokenize(b"some mixed text 0123 " * 100), val_fraction=0.2)
    model = TransformerModel(tiny_config(), np.random.default_rng(0))
    bpb = lm.evaluate_validation(model, corpus, window_len=16, max_windows=4)
    assert bpb > 0
