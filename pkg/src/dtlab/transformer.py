"""GPT-style causal transformer over the autodiff tensor core.

Pre-layernorm block order throughout:

    x = x + Attention(LN1(x))
    x = x + Feedforward(LN2(x))

with Attention(x) = softmax(Q(x)K(x)^T / sqrt(d_head) + causal_mask) V(x),
heads concatenated then output-projected, and Feedforward(x) = L2(g(L1(x)))
at hidden width 4n. The causal mask adds -inf above the diagonal so masked
attention entries are exactly zero after softmax. Learned absolute
positional embeddings are added to the (already embedded) inputs before
the first block; the LM head is the token embedding table transposed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "TransformerConfig",
    "TransformerModel",
    "ContextLengthError",
    "ACTIVATIONS",
    "parameter_count_formula",
]


class ContextLengthError(ValueError):
    """Sequence length or position index exceeds max_positions."""


ACTIVATIONS = {
    "relu": T.relu,
    "gelu": T.gelu,
    "identity": lambda x: x,
}


@dataclass
class TransformerConfig:
    model_dim: int = 128
    num_heads: int = 1
    num_layers: int = 3
    max_positions: int = 64
    vocab_size: int = 256
    dropout: float = 0.2
    activation: str = "relu"

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def parameter_count_formula(config: TransformerConfig) -> int:
    """Closed-form parameter count.

    V*n (token table) + max_positions*n (positions) + per layer
    12n^2 + 13n (QKV + output projection + two feedforward matrices,
    all with biases, plus two layernorms) + 2n (final layernorm).
    The tied LM head adds nothing.
    """
    n = config.model_dim
    return (
        config.vocab_size * n
        + config.max_positions * n
        + config.num_layers * (12 * n * n + 13 * n)
        + 2 * n
    )


def _normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(np.float32)


class TransformerModel:
    """Weights plus forward pass; training loops own the optimizer."""

    def __init__(self, config: TransformerConfig, rng: np.random.Generator):
        self.config = config
        n = config.model_dim
        p: dict[str, Tensor] = {}

        def param(name, data):
            p[name] = Tensor(data, requires_grad=True)

        param("tok_emb", _normal(rng, (config.vocab_size, n)))
        param("pos_emb", _normal(rng, (config.max_positions, n)))
        for i in range(config.num_layers):
            pre = f"layers.{i}."
            param(pre + "ln1.gain", np.ones(n, dtype=np.float32))
            param(pre + "ln1.bias", np.zeros(n, dtype=np.float32))
            param(pre + "attn.wq", _normal(rng, (n, n)))
            param(pre + "attn.bq", np.zeros(n, dtype=np.float32))
            param(pre + "attn.wk", _normal(rng, (n, n)))
            param(pre + "attn.bk", np.zeros(n, dtype=np.float32))
            param(pre + "attn.wv", _normal(rng, (n, n)))
            param(pre + "attn.bv", np.zeros(n, dtype=np.float32))
            param(pre + "attn.wo", _normal(rng, (n, n)))
            param(pre + "attn.bo", np.zeros(n, dtype=np.float32))
            param(pre + "ln2.gain", np.ones(n, dtype=np.float32))
            param(pre + "ln2.bias", np.zeros(n, dtype=np.float32))
            param(pre + "ff.w1", _normal(rng, (n, 4 * n)))
            param(pre + "ff.b1", np.zeros(4 * n, dtype=np.float32))
            param(pre + "ff.w2", _normal(rng, (4 * n, n)))
            param(pre + "ff.b2", np.zeros(n, dtype=np.float32))
        param("ln_f.gain", np.ones(n, dtype=np.float32))
        param("ln_f.bias", np.zeros(n, dtype=np.float32))
        self._params = p
        self._act = ACTIVATIONS[config.activation]

    # parameter access ----------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def set_frozen(self, frozen: bool) -> None:
        """Exclude (or re-admit) every transformer-owned weight from training.

        Covers attention, feedforward, all layernorms, and both embedding
        tables; the tied LM head freezes with the token table.
        """
        for p in self._params.values():
            p.requires_grad = not frozen

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    # forward -------------------------------------------------------------

    def embed_tokens(self, tokens: np.ndarray) -> Tensor:
        return T.take(self._params["tok_emb"], np.asarray(tokens, dtype=np.int64), axis=0)

    def logits(self, hidden: Tensor) -> Tensor:
        """Tied LM head: hidden @ E^T."""
        return T.matmul(hidden, T.transpose(self._params["tok_emb"], (1, 0)))

    def causal_self_attention(
        self,
        x: Tensor,
        layer: int,
        key_padding_mask: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        capture: bool = False,
    ):
        """softmax(Q(x)K(x)^T / sqrt(d_head) + causal mask) V(x).

        x is the (already normalized) block input, (B, T, n) or (T, n).
        Heads are split, attended, concatenated, and output-projected.
        Returns (output, weights) where weights is the post-softmax
        (B, heads, T, T) array when capture is set, else None.
        """
        cfg = self.config
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        b, t, n = x.shape
        if t > cfg.max_positions:
            raise ContextLengthError(
                f"sequence length {t} exceeds max_positions {cfg.max_positions}"
            )
        h, dh = cfg.num_heads, cfg.head_dim
        p = self._params
        pre = f"layers.{layer}."

        q = T.add(T.matmul(x, p[pre + "attn.wq"]), p[pre + "attn.bq"])
        k = T.add(T.matmul(x, p[pre + "attn.wk"]), p[pre + "attn.bk"])
        v = T.add(T.matmul(x, p[pre + "attn.wv"]), p[pre + "attn.bv"])
        # (B, T, n) -> (B, H, T, dh)
        q = T.transpose(T.reshape(q, (b, t, h, dh)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(k, (b, t, h, dh)), (0, 2, 1, 3))
        v = T.transpose(T.reshape(v, (b, t, h, dh)), (0, 2, 1, 3))
        scale = np.float32(1.0 / np.sqrt(dh))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)
        scores = T.add(scores, Tensor(np.triu(np.full((t, t), -np.inf, dtype=np.float32), k=1)))
        if key_padding_mask is not None:
            m = np.asarray(key_padding_mask, dtype=bool)
            if m.shape != (b, t):
                raise T.ShapeError(f"key_padding_mask shape {m.shape} != {(b, t)}")
            scores = T.add(
                scores, Tensor(np.where(m, 0.0, -1e9).astype(np.float32).reshape(b, 1, 1, t))
            )
        attn = T.softmax(scores, axis=-1)
        weights = attn.data.copy() if capture else None
        attn = T.dropout(attn, cfg.dropout, rng=rng, training=training)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, t, n))
        out = T.add(T.matmul(ctx, p[pre + "attn.wo"]), p[pre + "attn.bo"])
        out = T.dropout(out, cfg.dropout, rng=rng, training=training)
        if squeeze:
            out = T.reshape(out, (t, n))
            if weights is not None:
                weights = weights[0]
        return out, weights

    def feedforward(
        self,
        x: Tensor,
        layer: int,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """L2(g(L1(x))) with hidden width 4n."""
        p = self._params
        pre = f"layers.{layer}."
        f = T.add(T.matmul(x, p[pre + "ff.w1"]), p[pre + "ff.b1"])
        f = self._act(f)
        f = T.add(T.matmul(f, p[pre + "ff.w2"]), p[pre + "ff.b2"])
        return T.dropout(f, self.config.dropout, rng=rng, training=training)

    def forward_embedded(
        self,
        x: Tensor,
        positions: np.ndarray | None = None,
        key_padding_mask: np.ndarray | None = None,
        capture_attention: bool = False,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ):
        """Run the block stack on already-embedded inputs.

        x is (B, T, n) or (T, n); positions (default 0..T-1) index the
        positional table and are added before the first block. The
        optional key_padding_mask (B, T; True = real token) downweights
        padded keys by a large finite penalty so fully-padded rows stay
        finite. Returns (hidden, attention records), where records is a
        list of num_layers arrays shaped (B, heads, T, T) when
        capture_attention is set, else None.
        """
        cfg = self.config
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[-1] != cfg.model_dim:
            raise T.ShapeError(f"expected (B, T, {cfg.model_dim}) inputs, got {x.shape}")
        b, t, n = x.shape
        if t > cfg.max_positions:
            raise ContextLengthError(
                f"sequence length {t} exceeds max_positions {cfg.max_positions}"
            )
        if positions is None:
            positions = np.arange(t, dtype=np.int64)
        else:
            positions = np.asarray(positions, dtype=np.int64)
        if positions.shape not in ((t,), (b, t)):
            raise T.ShapeError(
                f"positions shape {positions.shape} not ({t},) or {(b, t)}"
            )
        if positions.max(initial=0) >= cfg.max_positions or positions.min(initial=0) < 0:
            raise ContextLengthError(
                f"position index out of range for max_positions {cfg.max_positions}"
            )

        x = T.add(x, T.take(self._params["pos_emb"], positions, axis=0))
        x = T.dropout(x, cfg.dropout, rng=rng, training=training)
        records: list[np.ndarray] | None = [] if capture_attention else None

        p = self._params
        for i in range(cfg.num_layers):
            pre = f"layers.{i}."
            a = T.layernorm(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"])
            attn_out, weights = self.causal_self_attention(
                a,
                i,
                key_padding_mask=key_padding_mask,
                training=training,
                rng=rng,
                capture=capture_attention,
            )
            if records is not None:
                records.append(weights)
            x = T.add(x, attn_out)

            f = T.layernorm(x, p[pre + "ln2.gain"], p[pre + "ln2.bias"])
            x = T.add(x, self.feedforward(f, i, training=training, rng=rng))

        x = T.layernorm(x, self._params["ln_f.gain"], self._params["ln_f.bias"])
        if squeeze:
            x = T.reshape(x, (t, n))
            if records is not None:
                records = [r[0] for r in records]
        return x, records

    def forward(
        self,
        tokens: np.ndarray,
        capture_attention: bool = False,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ):
        """Token ids -> next-token logits through the tied head.

        Returns logits (B, T, V), or (logits, records) when capturing.
        """
        x = self.embed_tokens(tokens)
        hidden, records = self.forward_embedded(
            x, capture_attention=capture_attention, training=training, rng=rng
        )
        out = self.logits(hidden)
        if capture_attention:
            return out, records
        return out
