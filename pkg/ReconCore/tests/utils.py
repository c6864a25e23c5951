"""Builders shared by the test modules."""

import numpy as np

from ReconCore.coil import build_model, synth_sensitivities
from ReconCore.dcomp import pipe_menon
from ReconCore.nufft import make_plan
from ReconCore.simulate import DatasetConfig, make_dataset
from ReconCore.trajectory import golden_angle_radial


def random_image(rng, side):
    return rng.standard_normal((side, side)) + 1j * rng.standard_normal((side, side))


def random_kspace(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def small_model(side=32, n_spokes=8, n_coils=2, seed=0, dc_iters=5):
    traj = golden_angle_radial(n_spokes, side)
    plan = make_plan(traj, side)
    dc = pipe_menon(plan, max_iters=dc_iters)
    return build_model(synth_sensitivities(n_coils, side, seed), plan, dc)


def tiny_dataset(root, workers=1, **overrides):
    """A 16×16 dataset small enough to train on inside a unit test."""
    settings = dict(
        side=16, train_count=3, val_count=2, test_count=0, spokes_min=4, spokes_max=6,
        coils_min=2, coils_max=2, test_spokes=[4], n_ellipses=4, dc_iters=3, seed=7,
    )
    settings.update(overrides)
    return make_dataset(DatasetConfig(**settings), root, workers=workers)
