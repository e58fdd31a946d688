"""Shared fixtures: a tiny rendered scene and a matching small run config."""

import numpy as np
import pytest

from dataset import load_dataset
from run_config import RunConfig
from scene_sim import NoiseSpec, emit_dataset, make_scene

TINY_SIZE = 12


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_scene")
    scene = make_scene("blocks", np.random.default_rng(3))
    emit_dataset(scene, root, n_views=8, n_times=4, noise=NoiseSpec(sigma=0.01), image_size=TINY_SIZE, seed=3)
    return root


@pytest.fixture
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


@pytest.fixture
def tiny_config():
    return RunConfig(
        seed=1,
        trunk_width=16,
        trunk_depth=2,
        pe_levels_pos=3,
        pe_levels_sun=2,
        n_season_classes=3,
        total_steps=10,
        phase1_fraction=0.3,
        image_rays_per_step=16,
        solar_rays_per_step=16,
        samples_per_ray=8,
        solar_sun_groups=2,
        log_every=1,
        checkpoint_every=4,
    )
