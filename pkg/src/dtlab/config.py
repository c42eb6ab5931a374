"""Run-level configuration shared by the CLI and the experiment recipes.

RunConfig aggregates every knob a single run needs. Field defaults
mirror the finetuning setup the techniques were designed around:
context 20, dropout 0.2, learning rate 1e-4, warmup 5000, batch 64.
Experiment recipes and tests override the budget fields (steps, eval
cadence) to desk scale; the semantics fields keep their defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .alignment import LossConfig
from .trajectory import TrajectoryConfig
from .training import FinetuneConfig
from .transformer import TransformerConfig

__all__ = ["RunConfig", "SIZE_PRESETS", "ENV_RTG_SCALE"]

# trunk shapes; "base" matches the bundled LM pretraining architecture,
# so it is the only preset a pretrained checkpoint can load into
SIZE_PRESETS: dict[str, dict] = {
    "tiny": {"model_dim": 32, "num_layers": 1, "num_heads": 2},
    "small": {"model_dim": 64, "num_layers": 2, "num_heads": 2},
    "base": {"model_dim": 128, "num_layers": 3, "num_heads": 1},
}

# rollout returns are O(1) for gridworld and O(-10) for pointmass, so a
# fixed conditioning scale per environment keeps R̂/scale near unit size
ENV_RTG_SCALE = {"gridworld": 1.0, "pointmass": 10.0}


@dataclass
class RunConfig:
    mode: str = "finetune"
    env: str = "pointmass"
    dataset: str | None = None
    tier: str = "medium-expert"
    episodes: int = 200
    data_seed: int = 0

    context: int = 20
    size: str = "base"
    dropout: float = 0.2
    max_timesteps: int = 64

    lambda1: float = 0.1
    lambda2: float = 0.2
    decay_end: int = 5000
    clusters: int = 100
    cotrain_sequences: int = 2
    cotrain_window: int = 64

    rtg_target: float | None = None
    rtg_scale: float | None = None  # None: per-environment default

    steps: int = 5000
    batch_size: int = 64
    lr: float = 1e-4
    warmup_steps: int = 5000
    weight_decay: float = 1e-4
    clip_norm: float = 0.25

    eval_every: int = 500
    eval_episodes: int = 10

    init: str = "pretrained"
    freeze: bool = False
    random_positions: bool = False
    checkpoint: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.size not in SIZE_PRESETS:
            raise ValueError(f"unknown size preset {self.size!r}; choose from {sorted(SIZE_PRESETS)}")
        if self.env not in ENV_RTG_SCALE:
            raise ValueError(f"unknown env {self.env!r}; choose from {sorted(ENV_RTG_SCALE)}")
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]
        if not self.seeds:
            raise ValueError("seeds must be nonempty")

    def resolved_rtg_scale(self) -> float:
        return ENV_RTG_SCALE[self.env] if self.rtg_scale is None else self.rtg_scale

    def transformer_config(self) -> TransformerConfig:
        preset = SIZE_PRESETS[self.size]
        max_pos = max(64, 3 * self.context)
        return TransformerConfig(
            max_positions=max_pos,
            vocab_size=256,
            dropout=self.dropout,
            activation="relu",
            **preset,
        )

    def traj_config(self, env) -> TrajectoryConfig:
        return TrajectoryConfig(
            state_dim=env.state_dim,
            action_dim=env.action_dim,
            discrete=env.discrete,
            context=self.context,
            rtg_scale=self.resolved_rtg_scale(),
            max_timesteps=self.max_timesteps,
            transformer=self.transformer_config(),
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            decay_end_step=self.decay_end,
            clusters=self.clusters,
            cotrain_sequences=self.cotrain_sequences,
            cotrain_window=self.cotrain_window,
        )

    def finetune_config(self, env, seed: int) -> FinetuneConfig:
        return FinetuneConfig(
            traj=self.traj_config(env),
            loss=self.loss_config(),
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            warmup_steps=self.warmup_steps,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
            eval_every=self.eval_every,
            eval_episodes=self.eval_episodes,
            rtg_target=self.rtg_target,
            init=self.init,
            freeze=self.freeze,
            random_positions=self.random_positions,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replaced(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **overrides)
