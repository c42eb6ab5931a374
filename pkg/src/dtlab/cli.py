"""Command-line driver.

Commands: pretrain | generate-data | finetune | evaluate | attention |
experiment | grad-check. Each writes its artifacts under the output
root (--out, else $DTLAB_OUT, else ./runs), echoes the effective
configuration as JSON at startup, and prints the artifact paths it
produced. Failures exit nonzero with a single machine-parsable line
on stderr: "error: <ExceptionType>: <message>".
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import envs, evalkit, gradcheck, lm
from .config import RunConfig
from .checkpoint import load_checkpoint
from .experiments import run_experiment
from .training import dt_model_from_checkpoint, finetune

# RunConfig fields that CLI flags may override; flag name = field with dashes
_RUN_FIELDS = [
    "env",
    "dataset",
    "tier",
    "episodes",
    "data_seed",
    "context",
    "size",
    "dropout",
    "max_timesteps",
    "lambda1",
    "lambda2",
    "decay_end",
    "clusters",
    "rtg_target",
    "rtg_scale",
    "steps",
    "batch_size",
    "lr",
    "warmup_steps",
    "weight_decay",
    "clip_norm",
    "eval_every",
    "eval_episodes",
    "init",
    "checkpoint",
]
_RUN_FIELD_TYPES = {
    "env": str,
    "dataset": str,
    "tier": str,
    "episodes": int,
    "data_seed": int,
    "context": int,
    "size": str,
    "dropout": float,
    "max_timesteps": int,
    "lambda1": float,
    "lambda2": float,
    "decay_end": int,
    "clusters": int,
    "rtg_target": float,
    "rtg_scale": float,
    "steps": int,
    "batch_size": int,
    "lr": float,
    "warmup_steps": int,
    "weight_decay": float,
    "clip_norm": float,
    "eval_every": int,
    "eval_episodes": int,
    "init": str,
    "checkpoint": str,
}


def _out_root(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get("DTLAB_OUT", "runs"))


def _echo(config: dict) -> None:
    print("effective-config " + json.dumps(config, sort_keys=True))


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with RunConfig keys")
    for name in _RUN_FIELDS:
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, type=_RUN_FIELD_TYPES[name], default=None, dest=name)
    parser.add_argument("--freeze", action="store_true", default=None)
    parser.add_argument("--random-positions", action="store_true", default=None)


def _run_config(args, seeds: list[int]) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            data.update(json.loads(Path(args.config).read_text()))
        except OSError as e:
            raise OSError(f"cannot read config {args.config}: {e}") from e
    for name in _RUN_FIELDS + ["freeze", "random_positions"]:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    data["seeds"] = seeds
    return RunConfig.from_dict(data)


# commands ---------------------------------------------------------------------


def _cmd_pretrain(args) -> int:
    profiles = lm.PROFILES()
    if args.profile not in profiles:
        raise ValueError(f"unknown profile {args.profile!r}; choose from {sorted(profiles)}")
    cfg = profiles[args.profile]
    if args.steps is not None:
        cfg.steps = args.steps
    if args.batch_tokens is not None:
        cfg.batch_tokens = args.batch_tokens
    if args.lr is not None:
        cfg.lr = args.lr
    if args.seed is not None:
        cfg.seed = args.seed
    corpus = lm.Corpus.from_file(args.corpus) if args.corpus else lm.Corpus.bundled()
    out_dir = _out_root(args) / "pretrain"
    from dataclasses import asdict

    _echo({"command": "pretrain", "profile": args.profile, **asdict(cfg)})
    result = lm.pretrain(cfg, corpus, out_dir)
    print(f"final-val-bpb {result.final_val_bpb!r}")
    for path in (result.checkpoint_path, result.metrics_path, result.figure_path):
        print(f"artifact {path}")
    return 0


def _cmd_generate_data(args) -> int:
    env = envs.make_env(args.env)
    out_dir = _out_root(args) / "data"
    _echo(
        {
            "command": "generate-data",
            "env": args.env,
            "tier": args.tier,
            "episodes": args.episodes,
            "seed": args.seed,
        }
    )
    paths = envs.generate_dataset(env, args.tier, args.episodes, args.seed, out_dir)
    print(f"artifact {paths.episodes}")
    print(f"artifact {paths.manifest}")
    return 0


def _prepare_dataset(cfg: RunConfig, env, out_dir: Path):
    if cfg.dataset is not None:
        episodes_path = Path(cfg.dataset)
        manifest_path = episodes_path.parent / (episodes_path.stem + ".manifest.json")
    else:
        paths = envs.generate_dataset(env, cfg.tier, cfg.episodes, cfg.data_seed, out_dir / "data")
        episodes_path, manifest_path = paths.episodes, paths.manifest
    return envs.load_dataset(episodes_path), envs.load_manifest(manifest_path)


def _cmd_finetune(args) -> int:
    cfg = _run_config(args, seeds=[args.seed])
    env = envs.make_env(cfg.env)
    out_dir = _out_root(args) / "finetune"
    _echo({"command": "finetune", **cfg.to_dict()})
    trajectories, manifest = _prepare_dataset(cfg, env, out_dir)
    result = finetune(
        cfg.finetune_config(env, args.seed),
        trajectories,
        env,
        manifest,
        out_dir / f"seed{args.seed}",
        checkpoint_path=cfg.checkpoint if cfg.init == "pretrained" else None,
    )
    print(f"best-normalized {result.report.best_normalized!r}")
    print(f"convergence-step {result.report.convergence_step}")
    for path in [result.checkpoint_path, result.metrics_path, result.eval_path] + list(
        result.figure_paths
    ):
        print(f"artifact {path}")
    return 0


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = dt_model_from_checkpoint(ckpt)
    env_name = args.env or ckpt.header.get("env")
    if env_name is None:
        raise ValueError("environment not recorded in checkpoint; pass --env")
    env = envs.make_env(env_name)
    _echo(
        {
            "command": "evaluate",
            "checkpoint": str(args.checkpoint),
            "env": env_name,
            "episodes": args.episodes,
            "target": args.target,
            "seed": args.seed,
        }
    )
    random_score, expert_score = envs.reference_scores(env, seed=args.seed)
    target = args.target if args.target is not None else expert_score
    rng = np.random.default_rng(args.seed)
    report = evalkit.EvalReport(
        variant="evaluate", seed=args.seed, random_score=random_score, expert_score=expert_score
    )
    returns = evalkit.evaluate_policy(model, env, target, args.episodes, rng)
    point = report.add(0, returns)
    out_dir = _out_root(args) / "evaluate"
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = report.save(out_dir / "report.json")
    print(f"mean-return {float(np.mean(returns))!r}")
    print(f"normalized-score {point.normalized_mean!r}")
    print(f"artifact {report_path}")
    return 0


def _cmd_attention(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = dt_model_from_checkpoint(ckpt)
    env_name = args.env or ckpt.header.get("env")
    if env_name is None:
        raise ValueError("environment not recorded in checkpoint; pass --env")
    env = envs.make_env(env_name)
    _echo(
        {
            "command": "attention",
            "checkpoint": str(args.checkpoint),
            "env": env_name,
            "temperature": args.temperature,
            "seed": args.seed,
        }
    )
    if args.dataset:
        trajectories = envs.load_dataset(args.dataset)
    else:
        rng = np.random.default_rng(args.seed)
        trajectories = [
            envs.rollout_policy(env, envs.medium_policy(env), rng) for _ in range(4)
        ]
    batch = model.build_batch(trajectories[:4], starts=[0] * min(4, len(trajectories)))
    out_dir = _out_root(args) / "attention"
    matrices = evalkit.attention_export(model, batch, out_dir, temperature=args.temperature)
    for layer in matrices:
        for ext in ("csv", "pgm", "png"):
            print(f"artifact {out_dir / f'attention-layer{layer}.{ext}'}")
    return 0


def _cmd_experiment(args) -> int:
    seeds = list(range(args.seeds))
    cfg = _run_config(args, seeds=seeds)
    _echo({"command": "experiment", "recipe": args.recipe, **cfg.to_dict()})
    result = run_experiment(args.recipe, cfg, _out_root(args))
    for (variant, seed), report in result.reports.items():
        print(
            f"result {variant} seed{seed} "
            f"best {report.best_normalized!r} convergence {report.convergence_step}"
        )
    print(f"artifact {result.runs_path}")
    print(f"artifact {result.comparison_path}")
    print(f"artifact {result.figure_path}")
    return 0


def _cmd_grad_check(args) -> int:
    worst: dict[str, float] = {}
    for seed in range(args.seeds):
        for op, err in gradcheck.run_op_suite(seed).items():
            worst[op] = max(worst.get(op, 0.0), err)
    failed = False
    for op in sorted(worst):
        print(f"{op} {worst[op]:.3e}")
        if worst[op] > args.tol:
            failed = True
    if failed:
        raise RuntimeError(f"gradient check exceeded tolerance {args.tol}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtlab",
        description="Byte-LM pretraining and trajectory finetuning toolkit.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--out", default=None, help="output root (default $DTLAB_OUT or ./runs)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("pretrain", help="byte-level LM pretraining on the bundled corpus")
    p.add_argument("--profile", default="desk")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-tokens", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--corpus", default=None, help="path to a UTF-8 text file")
    p.set_defaults(func=_cmd_pretrain)

    p = add_parser("generate-data", help="write an offline trajectory dataset")
    p.add_argument("--env", required=True, choices=envs.ENV_NAMES)
    p.add_argument("--tier", default="medium-expert", choices=envs.TIERS)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_generate_data)

    p = add_parser("finetune", help="train a trajectory model on an offline dataset")
    _add_run_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_finetune)

    p = add_parser("evaluate", help="conditioned rollouts from a finetuned checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--target", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = add_parser("attention", help="export head-averaged attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_attention)

    p = add_parser("experiment", help="run a named multi-variant recipe")
    p.add_argument("recipe")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds (0..N-1)")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_experiment)

    p = add_parser("grad-check", help="finite-difference check of every op")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line machine-parsable failure
        message = str(e).splitlines()[0] if str(e) else e.__class__.__name__
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
