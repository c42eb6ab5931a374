"""Return-conditioned evaluation: rollouts, scoring, attention export, CIs.

The rollout protocol conditions the model on a target return and
decrements it by the observed reward after every step, feeding the last
K timesteps back in. Scores are reported on the usual normalized scale
where the random policy is 0 and the expert is 100.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures
from .trajectory import Trajectory, TrajectoryModel

__all__ = [
    "rollout",
    "evaluate_policy",
    "normalized_score",
    "convergence_step",
    "attention_export",
    "bootstrap_ci",
    "EvalPoint",
    "EvalReport",
]


def rollout(
    model: TrajectoryModel,
    env,
    target_return: float,
    rng: np.random.Generator,
    max_steps: int | None = None,
) -> tuple[Trajectory, float]:
    """One return-conditioned episode; returns (trajectory, total reward).

    Starts from R̂ = target_return and maintains the invariant
    R̂_{t+1} = R̂_t - r_t. The action history is extended with a zero
    placeholder for the current step; causality keeps it invisible to
    the prediction read at the state token.
    """
    if not np.isfinite(target_return):
        raise ValueError(f"target_return must be finite, got {target_return}")
    cfg = model.config
    if bool(getattr(env, "discrete", False)) != cfg.discrete:
        raise ValueError(
            f"modality mismatch: env discrete={getattr(env, 'discrete', False)}, "
            f"model discrete={cfg.discrete}"
        )
    if env.state_dim != cfg.state_dim:
        raise ValueError(f"state_dim mismatch: env {env.state_dim}, model {cfg.state_dim}")
    horizon = env.horizon if max_steps is None else min(max_steps, env.horizon)
    if horizon > cfg.max_timesteps:
        raise ValueError(
            f"horizon {horizon} exceeds the timestep table size {cfg.max_timesteps}"
        )

    state = env.reset(rng)
    placeholder = 0 if cfg.discrete else np.zeros(cfg.action_dim)
    rtgs: list[float] = [float(target_return)]
    states: list[np.ndarray] = []
    actions: list = []
    rewards: list[float] = []
    for t in range(horizon):
        states.append(state)
        history_actions = actions + [placeholder]
        action = model.predict_action(
            np.asarray(rtgs),
            np.asarray(states),
            np.asarray(history_actions),
            np.arange(len(states)),
        )
        if not cfg.discrete:
            action = np.clip(action, -1.0, 1.0)
        nxt, reward, done = env.step(state, action)
        actions.append(action)
        rewards.append(reward)
        if done:
            break
        state = nxt
        rtgs.append(rtgs[-1] - reward)
    traj = Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards),
    )
    return traj, traj.total_return


def evaluate_policy(
    model: TrajectoryModel,
    env,
    target_return: float,
    n_episodes: int,
    rng: np.random.Generator,
) -> list[float]:
    return [rollout(model, env, target_return, rng)[1] for _ in range(n_episodes)]


def normalized_score(score: float, random_score: float, expert_score: float) -> float:
    """100·(score − random)/(expert − random); may leave [0, 100]."""
    if expert_score == random_score:
        raise ValueError(
            f"degenerate reference scores: expert == random == {expert_score}"
        )
    return 100.0 * (score - random_score) / (expert_score - random_score)


def convergence_step(scores, steps=None) -> int:
    """First evaluation step whose score is within 2 of the curve's best."""
    scores = list(scores)
    if not scores:
        raise ValueError("empty evaluation curve")
    if steps is None:
        steps = list(range(len(scores)))
    threshold = max(scores) - 2.0
    for step, score in zip(steps, scores):
        if score >= threshold:
            return step
    return steps[-1]  # unreachable: the max itself qualifies


# attention export -----------------------------------------------------------


def _sharpen(matrix: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise re-softmax at the given temperature.

    The captured rows are softmax(scores); raising them to 1/T and
    renormalizing equals softmax(scores/T) on the unmasked support,
    with masked (exactly zero) entries staying zero.
    """
    powered = matrix.astype(np.float64) ** (1.0 / temperature)
    sums = powered.sum(axis=-1, keepdims=True)
    return np.divide(powered, sums, out=np.zeros_like(powered), where=sums > 0)


def _write_pgm(path: Path, matrix: np.ndarray) -> None:
    gray = np.clip(np.rint(matrix * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def _write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="\n") as f:
        for row in matrix:
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")


def attention_export(
    model,
    batch,
    out_dir,
    temperature: float = 0.1,
    prefix: str = "attention",
) -> dict[int, dict[str, np.ndarray]]:
    """Per-layer head-averaged attention of the batch's first element.

    Writes, per layer: the raw averaged matrix as CSV (rows sum to 1)
    and the temperature-sharpened view as an 8-bit PGM plus a PNG
    heatmap. The causal upper triangle is exactly zero in both. Returns
    {layer: {"mean": raw, "sharp": sharpened}}.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    records: list[np.ndarray] = []
    if isinstance(model, TrajectoryModel):
        _, records = model.forward(batch, training=False, capture_attention=True)
    else:
        model.forward(batch, training=False, capture=records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out: dict[int, dict[str, np.ndarray]] = {}
    for layer, rec in enumerate(records):
        heads = rec if rec.ndim == 4 else rec[None]
        mean = heads[0].mean(axis=0)  # first batch element, head average
        sharp = _sharpen(mean, temperature)
        _write_matrix_csv(out_dir / f"{prefix}-layer{layer}.csv", mean)
        _write_pgm(out_dir / f"{prefix}-layer{layer}.pgm", sharp)
        figures.save_attention_heatmap(
            out_dir / f"{prefix}-layer{layer}.png",
            sharp,
            title=f"layer {layer} attention (T={temperature})",
        )
        out[layer] = {"mean": mean, "sharp": sharp}
    return out


# bootstrap -------------------------------------------------------------------


def bootstrap_ci(
    scores,
    n_resamples: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of per-seed scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError(f"scores must be a nonempty 1-D sequence, got shape {scores.shape}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if scores.size == 1:
        warnings.warn("bootstrap_ci over a single score: degenerate interval")
        return float(scores[0]), float(scores[0])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, scores.size, size=(n_resamples, scores.size))
    means = scores[idx].mean(axis=1)
    lo, hi = np.percentile(means, [50.0 * (1 - level), 100.0 - 50.0 * (1 - level)])
    return float(lo), float(hi)


# reports ----------------------------------------------------------------------


@dataclass
class EvalPoint:
    step: int
    returns: list[float]
    normalized_mean: float
    normalized_std: float


@dataclass
class EvalReport:
    """Evaluation curve for one training run plus its references."""

    variant: str
    seed: int
    random_score: float
    expert_score: float
    points: list[EvalPoint] = field(default_factory=list)

    def add(self, step: int, returns: list[float]) -> EvalPoint:
        normalized = [
            normalized_score(r, self.random_score, self.expert_score) for r in returns
        ]
        point = EvalPoint(
            step=step,
            returns=[float(r) for r in returns],
            normalized_mean=float(np.mean(normalized)),
            normalized_std=float(np.std(normalized)),
        )
        self.points.append(point)
        return point

    @property
    def best_normalized(self) -> float:
        if not self.points:
            raise ValueError("report has no evaluation points")
        return max(p.normalized_mean for p in self.points)

    @property
    def convergence_step(self) -> int:
        return convergence_step(
            [p.normalized_mean for p in self.points], [p.step for p in self.points]
        )

    def to_json(self) -> str:
        payload = {
            "variant": self.variant,
            "seed": self.seed,
            "random_score": self.random_score,
            "expert_score": self.expert_score,
            "convergence_step": self.convergence_step if self.points else None,
            "best_normalized": self.best_normalized if self.points else None,
            "points": [vars(p) for p in self.points],
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        obj = json.loads(text)
        report = cls(
            variant=obj["variant"],
            seed=obj["seed"],
            random_score=obj["random_score"],
            expert_score=obj["expert_score"],
        )
        report.points = [EvalPoint(**p) for p in obj["points"]]
        return report

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path
