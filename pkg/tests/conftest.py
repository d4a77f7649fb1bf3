"""Shared fixtures: tiny bundles and models sized for fast unit tests."""

from __future__ import annotations

import numpy as np
import pytest

import partal_lab as pl


@pytest.fixture(scope="session")
def tiny_bundle() -> pl.DatasetBundle:
    """8x8 scenes, 30 train / 10 test; enough structure to learn a little."""
    return pl.generate_dataset(
        pl.GeneratorConfig(H=8, W=8, num_bumps=2, noise_std=0.02,
                           num_classes=3, n_train=30, n_test=10),
        seed=123,
    )


@pytest.fixture(scope="session")
def tiny_net(tiny_bundle) -> pl.MultiTaskNet:
    return pl.MultiTaskNet(
        tiny_bundle.modalities, tiny_bundle.H, tiny_bundle.W, tiny_bundle.C_in,
        pl.NetConfig(hidden_dim=24, dropout_rate=0.1, aux_hidden=8),
        pl.SeededRng(5).split(0),
    )


@pytest.fixture()
def micro_setup():
    """4x4 pixels, K=2 (one continuous, one categorical): the grad-check rig."""
    mods = [
        pl.ModalitySpec("height", "continuous", 1.0, "rmse", False, dim=1),
        pl.ModalitySpec("region", "categorical", 2.0, "miou", True, num_classes=3),
    ]
    rng = pl.SeededRng(7)
    net = pl.MultiTaskNet(mods, 4, 4, 1,
                          pl.NetConfig(hidden_dim=6, dropout_rate=0.3, aux_hidden=4),
                          rng.split(0))
    gen = rng.split(1).generator()
    B = 5
    x = gen.standard_normal((B, 16))
    targets = {
        "height": gen.standard_normal((B, 1, 4, 4)),
        "region": gen.integers(0, 3, size=(B, 4, 4)),
    }
    mask = np.array([[1, 1], [1, 0], [0, 1], [1, 1], [0, 0]], dtype=bool)
    return net, mods, x, targets, mask, rng
