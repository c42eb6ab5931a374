"""Property sweep: analytic vs central-difference gradients over many seeds."""

import time

import numpy as np
import pytest

from dtlab.gradcheck import DEFAULT_TOL, run_op_suite


def test_op_suite_over_20_seeds_within_tolerance():
    t0 = time.time()
    worst: dict[str, float] = {}
    for seed in range(20):
        for name, err in run_op_suite(seed=seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.time() - t0
    offenders = {k: v for k, v in worst.items() if v > DEFAULT_TOL}
    assert not offenders, f"ops over tolerance: {offenders}"
    assert elapsed < 60.0


def test_suite_covers_block_and_all_core_ops():
    names = set(run_op_suite(seed=0))
    for expected in (
        "add",
        "mul",
        "div",
        "matmul",
        "softmax",
        "layernorm",
        "relu",
        "gelu",
        "take",
        "mse_loss",
        "cross_entropy",
        "transformer_block",
    ):
        assert expected in names
