"""Toy environments, scripted policies, and offline dataset tiers.

Two environments stand in for the usual control benchmarks:

  * GridWorld: 8x8 board, discrete moves, reward 1 on reaching the goal
    corner, else 0. The shortest-path expert always scores exactly 1.
  * PointMass: 2-D position+velocity, acceleration actions in [-1,1]^2,
    dense reward = -distance to goal each step. The expert is a
    saturating PD controller (bang-bang far out, proportional close in),
    so good behavior is a genuinely nonlinear function of state.

Transitions are deterministic; all randomness comes from reset and the
behavior policies, so a seed pins an entire dataset byte-for-byte.
Datasets are JSON-lines episodes plus a manifest carrying the tier
metadata and the random/expert reference scores used for normalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trajectory import Trajectory

__all__ = [
    "GridWorld",
    "PointMass",
    "make_env",
    "ENV_NAMES",
    "TIERS",
    "expert_policy",
    "random_policy",
    "medium_policy",
    "rollout_policy",
    "reference_scores",
    "generate_dataset",
    "load_dataset",
    "load_manifest",
    "calibrate_medium",
]

TIERS = ("medium", "medium-expert", "medium-replay")

# noise levels for the "medium" behavior policies, picked with
# calibrate_medium so medium return sits near the random/expert midpoint
# (gridworld: 0.57 vs midpoint 0.54; pointmass: -23.5 vs midpoint -22.7)
GRIDWORLD_MEDIUM_EPS = 0.75
POINTMASS_MEDIUM_SIGMA = 2.8


class GridWorld:
    """8x8 goal-reaching board. Actions: 0=up 1=down 2=left 3=right."""

    name = "gridworld"
    size = 8
    state_dim = 2
    discrete = True
    num_actions = 4
    action_dim = 4  # discrete head width
    horizon = 32
    goal = np.array([7.0, 7.0])

    _MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]], dtype=np.float64)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        while True:
            state = rng.integers(0, self.size, size=2).astype(np.float64)
            if not np.array_equal(state, self.goal):
                return state

    def step(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        if np.array_equal(state, self.goal):
            return state.copy(), 1.0, True
        action = int(action)
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} outside 0..{self.num_actions - 1}")
        nxt = np.clip(state + self._MOVES[action], 0, self.size - 1)
        done = bool(np.array_equal(nxt, self.goal))
        return nxt, (1.0 if done else 0.0), done

    def expert_action(self, state, rng=None) -> int:
        """Shortest path: close the row gap first, then the column gap."""
        dr = self.goal[0] - state[0]
        if dr != 0:
            return 1 if dr > 0 else 0
        dc = self.goal[1] - state[1]
        return 3 if dc > 0 else 2

    def random_action(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.num_actions))

    def noisy_expert_action(self, state, rng: np.random.Generator, eps: float) -> int:
        if rng.random() < eps:
            return self.random_action(rng)
        return self.expert_action(state)


class PointMass:
    """Double integrator on the plane; goal at the origin."""

    name = "pointmass"
    state_dim = 4  # px, py, vx, vy
    discrete = False
    action_dim = 2
    horizon = 40
    dt = 0.1
    vmax = 1.0
    goal_radius = 0.05
    kp = 4.0
    kd = 4.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        radius = rng.uniform(0.5, 1.2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([radius * np.cos(angle), radius * np.sin(angle), 0.0, 0.0])

    def step(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        v = np.clip(state[2:] + self.dt * a, -self.vmax, self.vmax)
        p = state[:2] + self.dt * v
        nxt = np.concatenate([p, v])
        dist = float(np.linalg.norm(p))
        return nxt, -dist, dist < self.goal_radius

    def expert_action(self, state, rng=None) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        return np.clip(-self.kp * state[:2] - self.kd * state[2:], -1.0, 1.0)

    def random_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=2)

    def noisy_expert_action(self, state, rng: np.random.Generator, sigma: float) -> np.ndarray:
        return np.clip(self.expert_action(state) + rng.normal(0.0, sigma, size=2), -1.0, 1.0)


ENV_NAMES = ("gridworld", "pointmass")


def make_env(name: str):
    if name == "gridworld":
        return GridWorld()
    if name == "pointmass":
        return PointMass()
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


# policies ------------------------------------------------------------------


def expert_policy(env):
    return lambda state, rng: env.expert_action(state, rng)


def random_policy(env):
    return lambda state, rng: env.random_action(rng)


def medium_policy(env, noise: float | None = None):
    """Noisy expert tuned toward the midpoint of random and expert return."""
    if isinstance(env, GridWorld):
        eps = GRIDWORLD_MEDIUM_EPS if noise is None else noise
        return lambda state, rng: env.noisy_expert_action(state, rng, eps)
    sigma = POINTMASS_MEDIUM_SIGMA if noise is None else noise
    return lambda state, rng: env.noisy_expert_action(state, rng, sigma)


def rollout_policy(env, policy, rng: np.random.Generator, max_steps: int | None = None) -> Trajectory:
    """Run one episode; the recorded action is exactly what was executed."""
    horizon = env.horizon if max_steps is None else min(max_steps, env.horizon)
    state = env.reset(rng)
    states, actions, rewards = [], [], []
    for _ in range(horizon):
        action = policy(state, rng)
        nxt, reward, done = env.step(state, action)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        state = nxt
        if done:
            break
    return Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards),
    )


def reference_scores(env, seed: int, n: int = 100) -> tuple[float, float]:
    """Mean return of the random and expert policies over n episodes each."""
    rand_rng, exp_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    random_score = float(
        np.mean([rollout_policy(env, random_policy(env), rand_rng).total_return for _ in range(n)])
    )
    expert_score = float(
        np.mean([rollout_policy(env, expert_policy(env), exp_rng).total_return for _ in range(n)])
    )
    return random_score, expert_score


# datasets --------------------------------------------------------------------


def _tier_policies(env, tier: str, n_episodes: int):
    """Per-episode policy list plus the mix description for the manifest."""
    if tier == "medium":
        return [medium_policy(env)] * n_episodes, {"medium": n_episodes}
    if tier == "medium-expert":
        policies = [
            expert_policy(env) if i % 2 == 0 else medium_policy(env)
            for i in range(n_episodes)
        ]
        n_expert = (n_episodes + 1) // 2
        return policies, {"expert": n_expert, "medium": n_episodes - n_expert}
    if tier == "medium-replay":
        # snapshots of an improving agent: noise anneals from fully
        # random down to the medium policy's level across episodes
        if isinstance(env, GridWorld):
            start, end = 1.0, GRIDWORLD_MEDIUM_EPS
        else:
            start, end = 6.0, POINTMASS_MEDIUM_SIGMA
        levels = np.linspace(start, end, n_episodes)
        policies = [medium_policy(env, noise=float(lv)) for lv in levels]
        return policies, {
            "replay_noise_start": float(start),
            "replay_noise_end": float(end),
            "episodes": n_episodes,
        }
    raise ValueError(f"unknown tier {tier!r}; choose from {TIERS}")


def _episode_to_json(traj: Trajectory) -> str:
    payload = {
        "states": traj.states.tolist(),
        "actions": traj.actions.tolist(),
        "rewards": traj.rewards.tolist(),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


@dataclass
class DatasetPaths:
    episodes: Path
    manifest: Path


def generate_dataset(env, tier: str, n_episodes: int, seed: int, out_dir) -> DatasetPaths:
    """Write <env>-<tier>.jsonl episodes and a manifest with reference scores."""
    if tier not in TIERS:
        raise ValueError(f"unknown tier {tier!r}; choose from {TIERS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen_ss, ref_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(gen_ss)
    policies, mix = _tier_policies(env, tier, n_episodes)
    episodes = [rollout_policy(env, policy, rng) for policy in policies]

    episodes_path = out_dir / f"{env.name}-{tier}.jsonl"
    try:
        with open(episodes_path, "w", newline="\n") as f:
            for traj in episodes:
                f.write(_episode_to_json(traj))
                f.write("\n")
    except OSError as e:
        raise OSError(f"cannot write dataset {episodes_path}: {e}") from e

    random_score, expert_score = reference_scores(env, int(ref_ss.generate_state(1)[0]))
    if not expert_score > random_score:
        raise RuntimeError(
            f"reference scores degenerate: expert {expert_score} ≤ random {random_score}"
        )
    manifest = {
        "environment": env.name,
        "tier": tier,
        "episodes": n_episodes,
        "policy_mix": mix,
        "random_score": random_score,
        "expert_score": expert_score,
        "mean_return": float(np.mean([t.total_return for t in episodes])),
        "seed": seed,
    }
    manifest_path = out_dir / f"{env.name}-{tier}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return DatasetPaths(episodes=episodes_path, manifest=manifest_path)


def load_dataset(episodes_path) -> list[Trajectory]:
    episodes_path = Path(episodes_path)
    out = []
    try:
        lines = episodes_path.read_text().splitlines()
    except OSError as e:
        raise OSError(f"cannot read dataset {episodes_path}: {e}") from e
    for line in lines:
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(
            Trajectory(
                states=np.asarray(obj["states"], dtype=np.float64),
                actions=np.asarray(obj["actions"]),
                rewards=np.asarray(obj["rewards"], dtype=np.float64),
            )
        )
    return out


def load_manifest(manifest_path) -> dict:
    return json.loads(Path(manifest_path).read_text())


def calibrate_medium(env, seed: int = 0, n: int = 50, levels=None) -> dict:
    """Mean return per noise level; used to pick the medium constants."""
    if levels is None:
        levels = np.linspace(0.1, 1.0, 10) if isinstance(env, GridWorld) else np.linspace(0.2, 2.0, 10)
    rng = np.random.default_rng(seed)
    table = {}
    for level in levels:
        policy = medium_policy(env, noise=float(level))
        returns = [rollout_policy(env, policy, rng).total_return for _ in range(n)]
        table[float(level)] = float(np.mean(returns))
    return table


if __name__ == "__main__":
    for name in ENV_NAMES:
        env = make_env(name)
        rand, exp = reference_scores(env, seed=0)
        print(f"{name}: random {rand:.3f} expert {exp:.3f}")
        print(f"  calibration {calibrate_medium(env)}")
