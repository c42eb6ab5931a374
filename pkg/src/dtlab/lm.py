"""Byte-level autoregressive language-model pretraining.

Tokenization is the identity map byte -> id, so V = 256 and the LM head
(tied to the token table) stays exactly 256 wide. PAD_ID = 256 exists
only as an ignore-index for loss masking; it is never embedded and never
predicted. The training objective is the mean next-byte cross-entropy
over a window, i.e. -(1/(N-1)) log P(x_2..x_N | x_1) under the model's
autoregressive factorization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .optim import AdamW
from .tensor import no_grad
from .transformer import TransformerConfig, TransformerModel

__all__ = [
    "VOCAB_SIZE",
    "PAD_ID",
    "tokenize",
    "detokenize",
    "Corpus",
    "lm_loss",
    "bits_per_byte",
    "unigram_entropy_bits",
    "PretrainConfig",
    "PretrainResult",
    "pretrain",
    "evaluate_validation",
    "model_from_checkpoint",
    "PROFILES",
]

VOCAB_SIZE = 256
# loss-mask sentinel only: outside the vocabulary, never embedded/predicted
PAD_ID = 256


def tokenize(data) -> np.ndarray:
    """bytes (or ASCII/UTF-8 str) -> int64 ids; identity on byte values."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int64)


def detokenize(tokens) -> bytes:
    arr = np.asarray(tokens)
    if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
        raise ValueError(f"token outside byte range [0, {VOCAB_SIZE})")
    return arr.astype(np.uint8).tobytes()


def bits_per_byte(loss_nats: float) -> float:
    return float(loss_nats) / math.log(2.0)


def unigram_entropy_bits(tokens) -> float:
    """Byte-frequency entropy in bits per byte; the no-context baseline."""
    counts = np.bincount(np.asarray(tokens, dtype=np.int64), minlength=VOCAB_SIZE)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty token sequence")
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


class Corpus:
    """Byte corpus with an ordered, disjoint train/validation split.

    The validation split is the final `val_fraction` of the bytes;
    training windows are sampled strictly from the train region.
    """

    def __init__(self, data, val_fraction: float = 0.1):
        tokens = tokenize(data)
        n_val = max(1, int(round(len(tokens) * val_fraction)))
        split = len(tokens) - n_val
        if split < 2:
            raise ValueError(
                f"corpus of {len(tokens)} bytes too small for val_fraction {val_fraction}"
            )
        self.train_tokens = tokens[:split]
        self.val_tokens = tokens[split:]

    @classmethod
    def from_file(cls, path, val_fraction: float = 0.1) -> "Corpus":
        path = Path(path)
        try:
            return cls(path.read_bytes(), val_fraction=val_fraction)
        except OSError as e:
            raise OSError(f"cannot read corpus {path}: {e}") from e

    @classmethod
    def bundled(cls, val_fraction: float = 0.1) -> "Corpus":
        from .corpusgen import default_corpus_path

        return cls.from_file(default_corpus_path(), val_fraction=val_fraction)

    def sample_windows(self, rng: np.random.Generator, n_windows: int, window_len: int) -> np.ndarray:
        """(n_windows, window_len + 1) token array from the train split."""
        span = window_len + 1
        if len(self.train_tokens) < span:
            raise ValueError(
                f"train split of {len(self.train_tokens)} tokens shorter than window {span}"
            )
        offsets = rng.integers(0, len(self.train_tokens) - span + 1, size=n_windows)
        return self.train_tokens[offsets[:, None] + np.arange(span)]

    def validation_windows(self, window_len: int, max_windows: int) -> np.ndarray:
        """Deterministic non-overlapping windows from the validation split."""
        span = window_len + 1
        n = min(max_windows, len(self.val_tokens) // span)
        if n == 0:
            raise ValueError("validation split shorter than one window")
        return self.val_tokens[: n * span].reshape(n, span)


def lm_loss(model: TransformerModel, window, training: bool = False, rng=None):
    """Mean cross-entropy of each token given its predecessors."""
    w = np.asarray(window, dtype=np.int64)
    if w.ndim == 1:
        w = w[None, :]
    if w.shape[1] < 2:
        raise ValueError(f"window length {w.shape[1]} < 2 leaves nothing to predict")
    inputs, targets = w[:, :-1], w[:, 1:]
    logits = model.forward(inputs, training=training, rng=rng)
    flat = T.reshape(logits, (-1, model.config.vocab_size))
    return T.cross_entropy(flat, targets.reshape(-1), ignore_index=PAD_ID)


def evaluate_validation(
    model: TransformerModel, corpus: Corpus, window_len: int, max_windows: int = 32
) -> float:
    """Validation bits-per-byte over fixed deterministic windows."""
    windows = corpus.validation_windows(window_len, max_windows)
    losses = []
    with no_grad():
        for start in range(0, len(windows), 8):
            chunk = windows[start : start + 8]
            losses.append(float(lm_loss(model, chunk).data) * len(chunk))
    return bits_per_byte(sum(losses) / len(windows))


@dataclass
class PretrainConfig:
    """Desk-scale defaults; the `paper` profile keeps the published scale."""

    model: TransformerConfig = field(
        default_factory=lambda: TransformerConfig(dropout=0.1)
    )
    steps: int = 2500
    batch_tokens: int = 2048
    window_len: int = 64
    lr: float = 3e-4
    warmup_steps: int = 250
    weight_decay: float = 1e-4
    clip_norm: float = 0.25
    eval_every: int = 250
    eval_windows: int = 32
    val_fraction: float = 0.1
    seed: int = 0

    @property
    def batch_sequences(self) -> int:
        if self.batch_tokens % self.window_len != 0:
            raise ValueError(
                f"batch_tokens {self.batch_tokens} not divisible by window_len {self.window_len}"
            )
        return self.batch_tokens // self.window_len


def PROFILES() -> dict[str, PretrainConfig]:
    desk = PretrainConfig()
    paper = replace(
        desk,
        steps=80000,
        batch_tokens=65536,
        warmup_steps=10000,
        lr=3e-4,
    )
    return {"desk": desk, "paper": paper}


@dataclass
class PretrainResult:
    model: TransformerModel
    checkpoint_path: Path
    metrics_path: Path
    figure_path: Path
    final_val_bpb: float
    steps: list
    train_losses: list
    val_steps: list
    val_bpbs: list


def pretrain(config: PretrainConfig, corpus: Corpus, out_dir) -> PretrainResult:
    """Train from scratch on the corpus; write checkpoint, CSV, and curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    init_ss, data_ss, drop_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = TransformerModel(config.model, rng=np.random.default_rng(init_ss))
    data_rng = np.random.default_rng(data_ss)
    drop_rng = np.random.default_rng(drop_ss)
    opt = AdamW(
        model.parameters(),
        lr=config.lr,
        weight_decay=config.weight_decay,
        warmup_steps=config.warmup_steps,
        clip_norm=config.clip_norm,
    )

    steps, train_losses, val_steps, val_bpbs = [], [], [], []
    rows = []
    for step in range(1, config.steps + 1):
        batch = corpus.sample_windows(data_rng, config.batch_sequences, config.window_len)
        loss = lm_loss(model, batch, training=True, rng=drop_rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
        train_loss = float(loss.data)
        steps.append(step)
        train_losses.append(train_loss)
        val_bpb = ""
        if step % config.eval_every == 0 or step == config.steps:
            bpb = evaluate_validation(model, corpus, config.window_len, config.eval_windows)
            val_steps.append(step)
            val_bpbs.append(bpb)
            val_bpb = repr(bpb)
        rows.append([step, repr(train_loss), val_bpb])

    metrics_path = out_dir / "pretrain_metrics.csv"
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "train_loss", "val_bpb"])
        writer.writerows(rows)

    from .figures import save_loss_curve

    figure_path = save_loss_curve(
        out_dir / "pretrain_loss.png",
        steps,
        train_losses,
        val_steps=val_steps,
        val_values=val_bpbs,
        val_label="validation (bits/byte)",
        ylabel="loss (nats) / bpb",
        title="byte-level LM pretraining",
    )

    from dataclasses import asdict

    header = {
        "kind": "lm",
        "config": asdict(config.model),
        "step": config.steps,
        "rng_state": data_rng.bit_generator.state,
        "final_val_bpb": val_bpbs[-1],
    }
    checkpoint_path = save_checkpoint(out_dir / "lm.ckpt", model.parameters(), header)
    return PretrainResult(
        model=model,
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
        figure_path=figure_path,
        final_val_bpb=val_bpbs[-1],
        steps=steps,
        train_losses=train_losses,
        val_steps=val_steps,
        val_bpbs=val_bpbs,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> TransformerModel:
    """Rebuild a transformer from a checkpoint written by `pretrain`."""
    cfg = TransformerConfig(**ckpt.header["config"])
    model = TransformerModel(cfg, rng=np.random.default_rng(0))
    params = model.parameters()
    missing = set(params) - set(ckpt.tensors)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)[:3]}...")
    for name, p in params.items():
        arr = ckpt.tensors[name]
        if arr.shape != p.data.shape:
            raise ValueError(
                f"tensor {name!r} shape {arr.shape} != model shape {p.data.shape}"
            )
        p.data[...] = arr
    return model
