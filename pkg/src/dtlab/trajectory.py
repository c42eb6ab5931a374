"""Trajectory modeling over the causal transformer.

An episode becomes the interleaved token sequence

    (R̂_1, s_1, a_1), (R̂_2, s_2, a_2), ...

where R̂_t is the undiscounted suffix sum of rewards (returns-to-go).
Each modality is projected to model width and the per-timestep learned
embedding is added; the transformer's absolute positional table is
indexed by the interleaved token position 0..3K-1 on top of that. The
action a_t is predicted from the hidden state at the s_t token, so the
prediction conditions on R̂_t and s_t but never on a_t itself.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .tensor import Tensor
from .transformer import TransformerConfig, TransformerModel, _normal

__all__ = [
    "Trajectory",
    "TrajectoryBatch",
    "TrajectoryConfig",
    "TrajectoryModel",
    "compute_returns_to_go",
    "sample_start_indices",
    "action_loss",
]


def compute_returns_to_go(rewards) -> np.ndarray:
    """Suffix sums R̂_i = r_i + R̂_{i+1}, R̂_N = r_N; undiscounted."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError(f"rewards must be 1-D, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    return np.cumsum(r[::-1])[::-1].copy()


@dataclass
class Trajectory:
    """One episode; arrays are float64 except discrete actions (int64)."""

    states: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T, action_dim) float, or (T,) int for discrete
    rewards: np.ndarray  # (T,)
    returns_to_go: np.ndarray = None  # (T,), derived from rewards if omitted

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.actions = np.asarray(self.actions)
        if self.actions.dtype.kind in "iu":
            self.actions = self.actions.astype(np.int64)
        else:
            self.actions = self.actions.astype(np.float64)
        if self.returns_to_go is None:
            self.returns_to_go = compute_returns_to_go(self.rewards)
        else:
            self.returns_to_go = np.asarray(self.returns_to_go, dtype=np.float64)
        n = len(self.rewards)
        if n == 0:
            raise ValueError("empty trajectory")
        if not (len(self.states) == len(self.actions) == len(self.returns_to_go) == n):
            raise ValueError("states/actions/rewards/returns_to_go lengths disagree")
        if not np.allclose(
            self.returns_to_go, compute_returns_to_go(self.rewards), atol=1e-5
        ):
            raise ValueError("returns_to_go inconsistent with rewards")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return float(self.returns_to_go[0])


@dataclass
class TrajectoryBatch:
    """Embedded windows ready for the transformer.

    inputs is (B, 3K, n): per timestep the (R̂, s, a) token triple, each
    modality projection plus the timestep embedding. token_mask marks
    real tokens (False = left padding): a window of L < K timesteps has
    exactly 3(K-L) False entries at the front. target_actions/loss_mask
    are per timestep (B, K).
    """

    inputs: Tensor
    timesteps: np.ndarray
    token_mask: np.ndarray
    target_actions: np.ndarray
    loss_mask: np.ndarray

    @property
    def context(self) -> int:
        return self.timesteps.shape[1]


def sample_start_indices(trajectories, context: int, rng: np.random.Generator) -> list[int]:
    """One uniform window start per trajectory."""
    return [int(rng.integers(0, len(traj))) for traj in trajectories]


@dataclass
class TrajectoryConfig:
    state_dim: int
    action_dim: int  # continuous dimension, or discrete action count
    discrete: bool = False
    context: int = 20  # K timesteps = 3K tokens
    rtg_scale: float = 1000.0
    max_timesteps: int = 64
    transformer: TransformerConfig = field(default_factory=TransformerConfig)

    def __post_init__(self):
        if self.context < 1:
            raise ValueError("context must be ≥ 1")
        if self.rtg_scale <= 0:
            raise ValueError("rtg_scale must be positive")
        if 3 * self.context > self.transformer.max_positions:
            raise ValueError(
                f"context {self.context} needs {3 * self.context} positions but the"
                f" transformer table has only {self.transformer.max_positions}"
            )


class TrajectoryModel:
    """Modality projections + transformer trunk + action head."""

    def __init__(
        self,
        config: TrajectoryConfig,
        rng: np.random.Generator,
        transformer: TransformerModel | None = None,
    ):
        self.config = config
        self.transformer = transformer or TransformerModel(config.transformer, rng)
        if transformer is not None and transformer.config.model_dim != config.transformer.model_dim:
            raise ValueError("transformer width disagrees with trajectory config")
        n = config.transformer.model_dim
        p: dict[str, Tensor] = {}

        def param(name, data):
            p[name] = Tensor(data, requires_grad=True)

        param("proj_r.w", _normal(rng, (1, n)))
        param("proj_r.b", np.zeros(n, dtype=np.float32))
        param("proj_s.w", _normal(rng, (config.state_dim, n)))
        param("proj_s.b", np.zeros(n, dtype=np.float32))
        if config.discrete:
            param("proj_a.emb", _normal(rng, (config.action_dim, n)))
        else:
            param("proj_a.w", _normal(rng, (config.action_dim, n)))
            param("proj_a.b", np.zeros(n, dtype=np.float32))
        param("time_emb", _normal(rng, (config.max_timesteps, n)))
        param("head_a.w", _normal(rng, (n, config.action_dim)))
        param("head_a.b", np.zeros(config.action_dim, dtype=np.float32))
        self._own = p

    @classmethod
    def from_pretrained(
        cls,
        config: TrajectoryConfig,
        ckpt: Checkpoint,
        rng: np.random.Generator,
        random_positions: bool = False,
    ) -> "TrajectoryModel":
        """Initialize the trunk from an LM checkpoint.

        random_positions re-initializes the positional table (ablation
        flag); every other transferred tensor is loaded untouched.
        """
        from .lm import model_from_checkpoint

        trunk = model_from_checkpoint(ckpt)
        cfg = TrajectoryConfig(
            state_dim=config.state_dim,
            action_dim=config.action_dim,
            discrete=config.discrete,
            context=config.context,
            rtg_scale=config.rtg_scale,
            max_timesteps=config.max_timesteps,
            transformer=trunk.config,
        )
        if random_positions:
            trunk["pos_emb"].data[...] = _normal(
                rng, trunk["pos_emb"].data.shape
            )
        return cls(cfg, rng, transformer=trunk)

    # parameter access ----------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = {f"transformer.{k}": v for k, v in self.transformer.parameters().items()}
        out.update(self._own)
        return out

    def projection_parameters(self) -> dict[str, Tensor]:
        """The trainable set in frozen mode: projections, head, timestep table."""
        return dict(self._own)

    def set_frozen(self, frozen: bool) -> None:
        self.transformer.set_frozen(frozen)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # batching -------------------------------------------------------------

    def build_batch(
        self,
        trajectories,
        rng: np.random.Generator | None = None,
        starts: list[int] | None = None,
        training: bool = False,
    ) -> TrajectoryBatch:
        """One length-≤K window per trajectory, left-padded to K.

        starts may be supplied explicitly (evaluation); otherwise they
        are sampled uniformly with rng.
        """
        if not trajectories:
            raise ValueError("empty trajectory list")
        for traj in trajectories:
            if len(traj) == 0:
                raise ValueError("empty trajectory")
        cfg = self.config
        k = cfg.context
        b = len(trajectories)
        if starts is None:
            if rng is None:
                raise ValueError("build_batch needs rng when starts not given")
            starts = sample_start_indices(trajectories, k, rng)

        rtg = np.zeros((b, k), dtype=np.float32)
        states = np.zeros((b, k, cfg.state_dim), dtype=np.float32)
        if cfg.discrete:
            actions = np.zeros((b, k), dtype=np.int64)
            targets = np.full((b, k), -1, dtype=np.int64)
        else:
            actions = np.zeros((b, k, cfg.action_dim), dtype=np.float32)
            targets = np.zeros((b, k, cfg.action_dim), dtype=np.float32)
        timesteps = np.zeros((b, k), dtype=np.int64)
        mask = np.zeros((b, k), dtype=bool)

        for i, (traj, start) in enumerate(zip(trajectories, starts)):
            length = min(k, len(traj) - start)
            if length < 1:
                raise ValueError(f"window start {start} beyond trajectory length {len(traj)}")
            pad = k - length
            sl = slice(start, start + length)
            rtg[i, pad:] = traj.returns_to_go[sl]
            states[i, pad:] = traj.states[sl]
            actions[i, pad:] = traj.actions[sl]
            targets[i, pad:] = traj.actions[sl]
            ts = np.arange(start, start + length)
            if ts.max() >= cfg.max_timesteps:
                raise ValueError(
                    f"timestep {ts.max()} exceeds max_timesteps {cfg.max_timesteps}"
                )
            timesteps[i, pad:] = ts
            mask[i, pad:] = True

        inputs = self.embed_inputs(rtg, states, actions, timesteps)
        token_mask = np.repeat(mask, 3, axis=1)
        return TrajectoryBatch(
            inputs=inputs,
            timesteps=timesteps,
            token_mask=token_mask,
            target_actions=targets,
            loss_mask=mask,
        )

    def embed_inputs(self, rtg, states, actions, timesteps) -> Tensor:
        """(B, K) modality arrays -> interleaved (B, 3K, n) representations."""
        cfg = self.config
        b, k = np.asarray(rtg).shape
        p = self._own
        r_in = Tensor(np.asarray(rtg, dtype=np.float32).reshape(b, k, 1) / np.float32(cfg.rtg_scale))
        r_emb = T.add(T.matmul(r_in, p["proj_r.w"]), p["proj_r.b"])
        s_emb = T.add(
            T.matmul(Tensor(np.asarray(states, dtype=np.float32)), p["proj_s.w"]),
            p["proj_s.b"],
        )
        if cfg.discrete:
            a_emb = T.take(p["proj_a.emb"], np.asarray(actions, dtype=np.int64), axis=0)
        else:
            a_emb = T.add(
                T.matmul(Tensor(np.asarray(actions, dtype=np.float32)), p["proj_a.w"]),
                p["proj_a.b"],
            )
        t_emb = T.take(p["time_emb"], np.asarray(timesteps, dtype=np.int64), axis=0)
        r_emb, s_emb, a_emb = (T.add(e, t_emb) for e in (r_emb, s_emb, a_emb))
        # (B, K, 3, n) -> (B, 3K, n) keeps the (R̂, s, a) order per timestep
        tokens = T.stack([r_emb, s_emb, a_emb], axis=2)
        n = cfg.transformer.model_dim
        return T.reshape(tokens, (b, 3 * k, n))

    # forward ----------------------------------------------------------------

    def forward(
        self,
        batch: TrajectoryBatch,
        training: bool = False,
        rng: np.random.Generator | None = None,
        capture_attention: bool = False,
    ):
        """Action predictions read from the hidden state at each s token."""
        b, three_k, n = batch.inputs.shape
        k = three_k // 3
        # positions count real tokens per row, so a left-padded window
        # sees the same positional rows as an unpadded one (padding
        # slots reuse position 0; the key mask hides them anyway)
        positions = np.maximum(
            np.cumsum(batch.token_mask, axis=1, dtype=np.int64) - 1, 0
        )
        hidden, records = self.transformer.forward_embedded(
            batch.inputs,
            positions=positions,
            key_padding_mask=batch.token_mask,
            capture_attention=capture_attention,
            training=training,
            rng=rng,
        )
        s_positions = 3 * np.arange(k, dtype=np.int64) + 1
        s_hidden = T.take(hidden, s_positions, axis=1)
        preds = T.add(T.matmul(s_hidden, self._own["head_a.w"]), self._own["head_a.b"])
        if capture_attention:
            return preds, records
        return preds

    def predict_action(self, rtg, states, actions, timesteps) -> np.ndarray:
        """Greedy action for the latest timestep of a single window.

        Inputs are unbatched (L ≤ K) histories whose last entry is the
        current timestep with a placeholder action; causality makes the
        placeholder invisible to the prediction at the s token.
        """
        cfg = self.config
        k = cfg.context
        take_last = min(len(np.asarray(rtg)), k)
        pad = k - take_last
        rtg_w = np.zeros((1, k), dtype=np.float32)
        rtg_w[0, pad:] = np.asarray(rtg, dtype=np.float32)[-take_last:]
        states_w = np.zeros((1, k, cfg.state_dim), dtype=np.float32)
        states_w[0, pad:] = np.asarray(states, dtype=np.float32)[-take_last:]
        if cfg.discrete:
            actions_w = np.zeros((1, k), dtype=np.int64)
            actions_w[0, pad:] = np.asarray(actions, dtype=np.int64)[-take_last:]
        else:
            actions_w = np.zeros((1, k, cfg.action_dim), dtype=np.float32)
            actions_w[0, pad:] = np.asarray(actions, dtype=np.float32)[-take_last:]
        timesteps_w = np.zeros((1, k), dtype=np.int64)
        timesteps_w[0, pad:] = np.asarray(timesteps, dtype=np.int64)[-take_last:]
        mask = np.zeros((1, k), dtype=bool)
        mask[0, pad:] = True

        inputs = self.embed_inputs(rtg_w, states_w, actions_w, timesteps_w)
        batch = TrajectoryBatch(
            inputs=inputs,
            timesteps=timesteps_w,
            token_mask=np.repeat(mask, 3, axis=1),
            target_actions=actions_w,
            loss_mask=mask,
        )
        with T.no_grad():
            preds = self.forward(batch)
        out = preds.data[0, -1]
        if cfg.discrete:
            return int(np.argmax(out))
        return out.copy()


def action_loss(model: TrajectoryModel, batch: TrajectoryBatch, training: bool = False, rng=None):
    """L_MSE over unmasked timesteps (cross-entropy for discrete actions)."""
    if not batch.loss_mask.any():
        warnings.warn("fully masked trajectory batch; action loss defined as 0")
        return Tensor(0.0)
    preds = model.forward(batch, training=training, rng=rng)
    if model.config.discrete:
        b, k = batch.loss_mask.shape
        flat = T.reshape(preds, (b * k, model.config.action_dim))
        return T.cross_entropy(flat, batch.target_actions.reshape(-1), ignore_index=-1)
    mask = batch.loss_mask[..., None].astype(np.float32)
    diff = T.sub(preds, Tensor(batch.target_actions))
    sq = T.mul(T.mul(diff, diff), Tensor(mask))
    count = float(batch.loss_mask.sum()) * model.config.action_dim
    return T.div(T.reduce_sum(sq), count)
