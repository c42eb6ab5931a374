"""Trajectory finetuning with the auxiliary alignment and LM objectives.

The loop minimizes

    L = L_action + λ1(t)·L_cos + λ2(t)·L_LM

where L_action is the behavior-cloning loss at state tokens, L_cos pulls
input representations toward k-means anchors of the (pretrained) token
embedding table, L_LM keeps the trunk predicting next bytes on the text
corpus, and both λs anneal linearly to zero. Setting λ1 = λ2 = 0 with a
random init recovers the plain return-conditioned baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures
from . import tensor as T
from .alignment import LossConfig, combined_loss, kmeans, l_cos, lambda_schedule
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evalkit import EvalReport, evaluate_policy
from .lm import Corpus, lm_loss
from .optim import AdamW
from .tensor import Tensor
from .trajectory import Trajectory, TrajectoryConfig, TrajectoryModel, action_loss

__all__ = [
    "FinetuneConfig",
    "FinetuneResult",
    "finetune",
    "dt_model_from_checkpoint",
]


@dataclass
class FinetuneConfig:
    traj: TrajectoryConfig
    loss: LossConfig = field(default_factory=LossConfig)
    steps: int = 1000
    batch_size: int = 64
    lr: float = 1e-4
    warmup_steps: int = 5000
    weight_decay: float = 1e-4
    clip_norm: float = 0.25
    eval_every: int = 500
    eval_episodes: int = 10
    rtg_target: float | None = None  # None: condition on the expert reference
    init: str = "pretrained"
    freeze: bool = False
    random_positions: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.init not in ("pretrained", "random"):
            raise ValueError(f"init must be 'pretrained' or 'random', got {self.init!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("eval cadence fields must be positive")


@dataclass
class FinetuneResult:
    report: EvalReport
    model: TrajectoryModel
    checkpoint_path: Path
    metrics_path: Path
    eval_path: Path
    figure_paths: list[Path]
    train_losses: list[float]


def _build_model(config: FinetuneConfig, checkpoint_path, rng) -> TrajectoryModel:
    if config.init == "random":
        return TrajectoryModel(config.traj, rng)
    if checkpoint_path is None:
        raise ValueError("pretrained init requires a checkpoint path")
    ckpt = load_checkpoint(checkpoint_path)
    model = TrajectoryModel.from_pretrained(
        config.traj, ckpt, rng, random_positions=config.random_positions
    )
    # the transferred trunk keeps its architecture but trains at the
    # finetuning dropout rate, not the pretraining one
    model.transformer.config.dropout = config.traj.transformer.dropout
    return model


def finetune(
    config: FinetuneConfig,
    trajectories: list[Trajectory],
    env,
    manifest: dict,
    out_dir,
    checkpoint_path=None,
    corpus: Corpus | None = None,
    variant: str = "run",
) -> FinetuneResult:
    """Train on offline trajectories; evaluate by conditioned rollout.

    manifest supplies the random/expert reference scores used both for
    normalization and (by default) as the rollout return target.
    """
    if not trajectories:
        raise ValueError("no trajectories to train on")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    init_ss, data_ss, drop_ss, eval_ss, cotrain_ss = np.random.SeedSequence(
        config.seed
    ).spawn(5)
    init_rng = np.random.default_rng(init_ss)
    data_rng = np.random.default_rng(data_ss)
    drop_rng = np.random.default_rng(drop_ss)
    cotrain_rng = np.random.default_rng(cotrain_ss)

    model = _build_model(config, checkpoint_path, init_rng)
    loss_cfg = config.loss
    anchors = None
    if loss_cfg.lambda1 > 0:
        # anchors come from the embedding table the trunk starts with;
        # they are fixed targets, never updated during finetuning
        anchors = kmeans(
            model.transformer["tok_emb"].data, loss_cfg.clusters, seed=config.seed
        )
    if loss_cfg.lambda2 > 0 and corpus is None:
        corpus = Corpus.bundled()

    model.set_frozen(config.freeze)
    opt = AdamW(
        model.parameters(),
        lr=config.lr,
        warmup_steps=config.warmup_steps,
        weight_decay=config.weight_decay,
        clip_norm=config.clip_norm,
    )

    target = config.rtg_target
    if target is None:
        target = float(manifest["expert_score"])
    report = EvalReport(
        variant=variant,
        seed=config.seed,
        random_score=float(manifest["random_score"]),
        expert_score=float(manifest["expert_score"]),
    )

    n_traj = len(trajectories)
    rows = []
    train_losses: list[float] = []
    for step in range(config.steps):
        picks = data_rng.integers(0, n_traj, size=config.batch_size)
        batch = model.build_batch([trajectories[i] for i in picks], rng=data_rng)
        lam1 = lambda_schedule(step, loss_cfg.lambda1, loss_cfg.decay_end_step)
        lam2 = lambda_schedule(step, loss_cfg.lambda2, loss_cfg.decay_end_step)

        l_act = action_loss(model, batch, training=True, rng=drop_rng)
        l_c = None
        if lam1 > 0:
            raw = l_cos(batch.inputs, anchors, token_mask=batch.token_mask)
            # per-token mean keeps λ1 comparable to the per-element action loss
            l_c = T.div(raw, Tensor(float(batch.token_mask.sum())))
        l_lm = None
        if lam2 > 0:
            windows = corpus.sample_windows(
                cotrain_rng, loss_cfg.cotrain_sequences, loss_cfg.cotrain_window
            )
            l_lm = lm_loss(model.transformer, windows, training=True, rng=drop_rng)

        total = combined_loss(l_act, l_c, l_lm, step, loss_cfg)
        opt.zero_grad()
        total.backward()
        if l_lm is None:
            # the tied token table only feeds the LM head; without the
            # co-training term its gradient is legitimately zero
            tok = model.transformer["tok_emb"]
            if tok.requires_grad and tok.grad is None:
                tok.grad = np.zeros_like(tok.data)
        grad_norm = opt.step()

        train_losses.append(float(total.data))
        rows.append(
            (
                step + 1,
                float(total.data),
                float(l_act.data),
                float(l_c.data) if l_c is not None else 0.0,
                float(l_lm.data) if l_lm is not None else 0.0,
                lam1,
                lam2,
                grad_norm,
            )
        )

        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            eval_rng = np.random.default_rng(eval_ss.spawn(1)[0])
            returns = evaluate_policy(
                model, env, target, config.eval_episodes, eval_rng
            )
            report.add(step + 1, returns)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="\n") as f:
        f.write("step,total_loss,action_loss,l_cos,l_lm,lambda1,lambda2,grad_norm\n")
        for row in rows:
            f.write(",".join([str(row[0])] + [repr(float(v)) for v in row[1:]]))
            f.write("\n")

    eval_path = out_dir / "eval.csv"
    with open(eval_path, "w", newline="\n") as f:
        f.write("step,mean_return,normalized_mean,normalized_std\n")
        for p in report.points:
            f.write(
                ",".join(
                    [
                        str(p.step),
                        repr(float(np.mean(p.returns))),
                        repr(p.normalized_mean),
                        repr(p.normalized_std),
                    ]
                )
            )
            f.write("\n")
    report.save(out_dir / "report.json")

    figure_paths = [
        figures.save_loss_curve(
            out_dir / "loss.png",
            [r[0] for r in rows],
            [r[1] for r in rows],
            val_steps=[p.step for p in report.points],
            val_values=[p.normalized_mean for p in report.points],
            val_label="normalized score",
            ylabel="training loss",
            title=f"finetune ({variant})",
        )
    ]

    header = {
        "kind": "dt",
        "traj_config": {
            "state_dim": config.traj.state_dim,
            "action_dim": config.traj.action_dim,
            "discrete": config.traj.discrete,
            "context": model.config.context,
            "rtg_scale": model.config.rtg_scale,
            "max_timesteps": model.config.max_timesteps,
        },
        "transformer_config": vars(model.transformer.config),
        "step": config.steps,
        "seed": config.seed,
        "variant": variant,
        "env": getattr(env, "name", "unknown"),
    }
    checkpoint_out = out_dir / "dt.ckpt"
    save_checkpoint(
        checkpoint_out, {k: v.data for k, v in model.parameters().items()}, header
    )

    return FinetuneResult(
        report=report,
        model=model,
        checkpoint_path=checkpoint_out,
        metrics_path=metrics_path,
        eval_path=eval_path,
        figure_paths=figure_paths,
        train_losses=train_losses,
    )


def dt_model_from_checkpoint(ckpt: Checkpoint) -> TrajectoryModel:
    """Rebuild a finetuned trajectory model saved by finetune()."""
    from .transformer import TransformerConfig

    header = ckpt.header
    if header.get("kind") != "dt":
        raise ValueError(f"not a trajectory checkpoint (kind={header.get('kind')!r})")
    t_cfg = TransformerConfig(**header["transformer_config"])
    cfg = TrajectoryConfig(transformer=t_cfg, **header["traj_config"])
    model = TrajectoryModel(cfg, np.random.default_rng(0))
    params = model.parameters()
    if set(params) != set(ckpt.tensors):
        missing = set(params) ^ set(ckpt.tensors)
        raise ValueError(f"checkpoint parameter mismatch: {sorted(missing)[:4]}")
    for name, tensor in params.items():
        stored = ckpt.tensors[name]
        if stored.shape != tensor.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: {stored.shape} vs {tensor.data.shape}"
            )
        tensor.data[...] = stored
    return model
