"""Transfer objectives: embedding anchors, alignment loss, loss schedule.

The alignment loss pulls every trajectory input representation toward
its nearest anchor by cosine similarity:

    L_cos = - sum_i  max_j  cos(I_i, anchor_j)

Anchors are K-means centers of the pretrained token-embedding table,
computed once at finetune start and held fixed; no gradient flows to
them. The auxiliary weights decay linearly to exactly zero:

    lambda(step) = initial * max(0, 1 - step / decay_end_step)

and the combined objective is L_MSE + lambda1*L_cos + lambda2*L_LM with
zero-weight terms skipped entirely, so the degenerate mode is
bit-identical to plain L_MSE.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "cosine",
    "kmeans",
    "EmbeddingAnchors",
    "l_cos",
    "lambda_schedule",
    "combined_loss",
    "LossConfig",
]

COSINE_EPS = 1e-8


def cosine(z1, z2) -> float:
    """(z1/|z1|)·(z2/|z2|); rejects zero vectors outright."""
    a = np.asarray(z1, dtype=np.float64).ravel()
    b = np.asarray(z2, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(a @ b / (na * nb))


def _checksum(table: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(table, dtype="<f4").tobytes()).hexdigest()


@dataclass
class EmbeddingAnchors:
    centers: np.ndarray  # (K, n) float32
    k: int
    source_checksum: str

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float32)
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("anchor centers must be finite")
        if self.centers.shape[0] != self.k:
            raise ValueError("anchor count disagrees with k")

    def matches(self, table: np.ndarray) -> bool:
        """True when these anchors were built from exactly this table."""
        return _checksum(table) == self.source_checksum


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (
        (points * points).sum(axis=1, keepdims=True)
        - 2.0 * points @ centers.T
        + (centers * centers).sum(axis=1)
    )
    return np.maximum(d, 0.0)


def kmeans(table, k: int, seed: int = 0, max_iter: int = 100, rel_tol: float = 1e-6) -> EmbeddingAnchors:
    """Lloyd's algorithm with k-means++ seeding over embedding rows.

    Stops at max_iter or when the relative objective change drops below
    rel_tol. Empty clusters are re-seeded from the point farthest from
    its assigned center. Requires k ≤ rows and, for a faithful k-means++
    start, at most `distinct rows` clusters.
    """
    e = np.asarray(table, dtype=np.float64)
    v = e.shape[0]
    if k > v:
        raise ValueError(f"k={k} exceeds table rows {v}")
    if k < 1:
        raise ValueError("k must be ≥ 1")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, e.shape[1]), dtype=np.float64)
    centers[0] = e[rng.integers(v)]
    d2 = _squared_distances(e, centers[:1]).min(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            raise ValueError(f"k={k} exceeds the number of distinct rows")
        centers[j] = e[rng.choice(v, p=d2 / total)]
        d2 = np.minimum(d2, _squared_distances(e, centers[j : j + 1]).min(axis=1))

    prev_obj = np.inf
    for _ in range(max_iter):
        dist = _squared_distances(e, centers)
        assign = dist.argmin(axis=1)
        obj = float(dist[np.arange(v), assign].sum())
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = e[members].mean(axis=0)
            else:
                farthest = int(dist[np.arange(v), assign].argmax())
                centers[j] = e[farthest]
                assign[farthest] = j
                dist = _squared_distances(e, centers)
        if prev_obj - obj <= rel_tol * max(abs(prev_obj), 1e-12) and np.isfinite(prev_obj):
            break
        prev_obj = obj

    return EmbeddingAnchors(
        centers=centers.astype(np.float32), k=k, source_checksum=_checksum(table)
    )


def l_cos(inputs, anchors: EmbeddingAnchors, token_mask: np.ndarray | None = None) -> Tensor:
    """-sum_i max_j cos(I_i, anchor_j), differentiable through I.

    inputs is (M, n) or (B, L, n); token_mask (matching the leading
    shape) restricts the sum to real tokens. Anchors are constants.
    Ties at the maximum route their subgradient to the lowest anchor
    index. Norms carry a 1e-8 epsilon so zero rows stay finite.
    """
    x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    if x.ndim == 3:
        b, l, n = x.shape
        x = T.reshape(x, (b * l, n))
        if token_mask is not None:
            flat = np.asarray(token_mask, dtype=bool).reshape(-1)
            if flat.shape[0] != b * l:
                raise T.ShapeError("token_mask does not match inputs")
            x = T.take(x, np.nonzero(flat)[0], axis=0)
    elif token_mask is not None:
        x = T.take(x, np.nonzero(np.asarray(token_mask, dtype=bool))[0], axis=0)

    hat = anchors.centers / (
        np.linalg.norm(anchors.centers, axis=1, keepdims=True) + COSINE_EPS
    )
    norms = T.add(T.sqrt(T.reduce_sum(T.mul(x, x), axis=1, keepdims=True)), COSINE_EPS)
    unit = T.div(x, norms)
    sims = T.matmul(unit, Tensor(hat.astype(np.float32).T))
    return T.neg(T.reduce_sum(T.reduce_max(sims, axis=1)))


def lambda_schedule(step: int, initial: float, decay_end_step: int) -> float:
    """Linear decay from initial to exactly 0 at decay_end_step."""
    if decay_end_step < 1:
        raise ValueError("decay_end_step must be ≥ 1")
    if step < 0:
        raise ValueError("step must be ≥ 0")
    if step >= decay_end_step:
        return 0.0
    return initial * (1.0 - step / decay_end_step)


@dataclass
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 0.2
    decay_end_step: int = 5000
    clusters: int = 100
    cotrain_sequences: int = 2
    cotrain_window: int = 64

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be ≥ 0")
        if self.decay_end_step < 1:
            raise ValueError("decay_end_step must be ≥ 1")


def combined_loss(
    l_mse: Tensor,
    l_cos_term: Tensor | None,
    l_lm_term: Tensor | None,
    step: int,
    config: LossConfig,
) -> Tensor:
    """L_MSE + lambda1(step)·L_cos + lambda2(step)·L_LM.

    Zero-weight terms are skipped, not multiplied by zero, so the result
    is the same graph node as l_mse when both weights have decayed.
    """
    lam1 = lambda_schedule(step, config.lambda1, config.decay_end_step)
    lam2 = lambda_schedule(step, config.lambda2, config.decay_end_step)
    out = l_mse
    if lam1 != 0.0 and l_cos_term is not None:
        out = T.add(out, T.mul(l_cos_term, lam1))
    if lam2 != 0.0 and l_lm_term is not None:
        out = T.add(out, T.mul(l_lm_term, lam2))
    return out
