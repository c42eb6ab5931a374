"""Experiment recipes: named variant sets run over seeds with shared data.

Each recipe expands a base RunConfig into named variants, trains every
(variant, seed) pair on one shared offline dataset, and writes:

  * per-run artifacts under <out>/<recipe>/<variant>/seed<k>/
  * runs.csv        one row per (variant, seed)
  * comparison.csv  one row per variant, per-seed best scores as columns
  * curves.png      median normalized-score curve per variant

Recipes:
  transfer     pretrained-init vs random-init
  dt-baseline  single variant: random init, both auxiliary weights zero
  ablation     full, -L_cos, -L_LM, random-pos (all pretrained init)
  freeze       full finetuning vs frozen trunk (projections only)
  size         capacity sweep over trunk presets, random init
  context      context-length sweep, pretrained init
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import figures
from .config import RunConfig
from .envs import generate_dataset, load_dataset, load_manifest, make_env
from .evalkit import EvalReport
from .training import finetune

__all__ = ["RECIPES", "recipe_variants", "run_experiment", "ExperimentResult"]


def _transfer(base: RunConfig) -> list[tuple[str, dict]]:
    return [
        ("pretrained", {"init": "pretrained"}),
        ("random", {"init": "random"}),
    ]


def _dt_baseline(base: RunConfig) -> list[tuple[str, dict]]:
    return [("dt-baseline", {"init": "random", "lambda1": 0.0, "lambda2": 0.0})]


def _ablation(base: RunConfig) -> list[tuple[str, dict]]:
    return [
        ("full", {"init": "pretrained"}),
        ("no-cos", {"init": "pretrained", "lambda1": 0.0}),
        ("no-lm", {"init": "pretrained", "lambda2": 0.0}),
        ("random-pos", {"init": "pretrained", "random_positions": True}),
    ]


def _freeze(base: RunConfig) -> list[tuple[str, dict]]:
    return [
        ("finetuned", {"init": "pretrained", "freeze": False}),
        ("frozen", {"init": "pretrained", "freeze": True}),
    ]


def _size(base: RunConfig) -> list[tuple[str, dict]]:
    return [
        (f"size-{preset}", {"size": preset, "init": "random"})
        for preset in ("tiny", "small", "base")
    ]


def _context(base: RunConfig) -> list[tuple[str, dict]]:
    return [
        (f"context-{k}", {"context": k})
        for k in sorted({5, 10, base.context})
    ]


RECIPES = {
    "transfer": _transfer,
    "dt-baseline": _dt_baseline,
    "ablation": _ablation,
    "freeze": _freeze,
    "size": _size,
    "context": _context,
}


def recipe_variants(recipe: str, base: RunConfig) -> list[tuple[str, dict]]:
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe {recipe!r}; choose from {sorted(RECIPES)}")
    return RECIPES[recipe](base)


@dataclass
class ExperimentResult:
    recipe: str
    out_dir: Path
    reports: dict[tuple[str, int], EvalReport]
    runs_path: Path
    comparison_path: Path
    figure_path: Path

    def variant_names(self) -> list[str]:
        seen: list[str] = []
        for name, _ in self.reports:
            if name not in seen:
                seen.append(name)
        return seen

    def median_best(self, variant: str) -> float:
        return float(
            np.median(
                [r.best_normalized for (v, _), r in self.reports.items() if v == variant]
            )
        )

    def median_convergence(self, variant: str) -> float:
        return float(
            np.median(
                [r.convergence_step for (v, _), r in self.reports.items() if v == variant]
            )
        )


def _ensure_dataset(base: RunConfig, env, out_dir: Path):
    if base.dataset is not None:
        episodes_path = Path(base.dataset)
        manifest_path = episodes_path.parent / (episodes_path.stem + ".manifest.json")
    else:
        paths = generate_dataset(
            env, base.tier, base.episodes, base.data_seed, out_dir / "data"
        )
        episodes_path, manifest_path = paths.episodes, paths.manifest
    return load_dataset(episodes_path), load_manifest(manifest_path)


def run_experiment(recipe: str, base: RunConfig, out_root) -> ExperimentResult:
    """Train every (variant, seed) pair on one shared dataset and compare."""
    variants = recipe_variants(recipe, base)
    out_dir = Path(out_root) / recipe
    out_dir.mkdir(parents=True, exist_ok=True)
    env = make_env(base.env)
    trajectories, manifest = _ensure_dataset(base, env, out_dir)

    reports: dict[tuple[str, int], EvalReport] = {}
    for name, overrides in variants:
        cfg = base.replaced(**overrides)
        for seed in base.seeds:
            run_dir = out_dir / name / f"seed{seed}"
            result = finetune(
                cfg.finetune_config(env, seed),
                trajectories,
                env,
                manifest,
                run_dir,
                checkpoint_path=cfg.checkpoint if cfg.init == "pretrained" else None,
                variant=name,
            )
            reports[(name, seed)] = result.report

    runs_path = out_dir / "runs.csv"
    with open(runs_path, "w", newline="\n") as f:
        f.write("recipe,variant,seed,best_normalized,convergence_step,final_normalized\n")
        for (name, seed), report in reports.items():
            f.write(
                ",".join(
                    [
                        recipe,
                        name,
                        str(seed),
                        repr(report.best_normalized),
                        str(report.convergence_step),
                        repr(report.points[-1].normalized_mean),
                    ]
                )
            )
            f.write("\n")

    # wide table: one row per variant, one best-score column per seed
    comparison_path = out_dir / "comparison.csv"
    with open(comparison_path, "w", newline="\n") as f:
        seed_cols = ",".join(f"seed{seed}_best" for seed in base.seeds)
        f.write(f"recipe,variant,{seed_cols},median_best,median_convergence\n")
        for name, _ in variants:
            bests = [repr(reports[(name, seed)].best_normalized) for seed in base.seeds]
            med_best = float(np.median([reports[(name, s)].best_normalized for s in base.seeds]))
            med_conv = float(np.median([reports[(name, s)].convergence_step for s in base.seeds]))
            f.write(
                ",".join([recipe, name] + bests + [repr(med_best), repr(med_conv)])
            )
            f.write("\n")

    curves = {}
    for name, _ in variants:
        per_seed = [reports[(name, seed)] for seed in base.seeds]
        steps = [p.step for p in per_seed[0].points]
        values = np.median(
            [[p.normalized_mean for p in r.points] for r in per_seed], axis=0
        )
        curves[name] = (steps, values.tolist())
    figure_path = figures.save_eval_curves(
        out_dir / "curves.png", curves, title=f"{recipe}: median over {len(base.seeds)} seeds"
    )

    return ExperimentResult(
        recipe=recipe,
        out_dir=out_dir,
        reports=reports,
        runs_path=runs_path,
        comparison_path=comparison_path,
        figure_path=figure_path,
    )
