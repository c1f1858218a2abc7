"""Shared fixtures: camera, small configs, tiny networks and datasets on disk."""

import numpy as np
import pytest

from odmd_app.benchmark import build_benchmark_set
from odmd_app.config import CameraIntrinsics, GenerationConfig, PerturbConfig, TrainConfig
from odmd_app.geometry import ObservationSet, Object3D, project_box
from odmd_app.network import init_params


def synthetic_observations(K, obj, positions):
    """Exact boxes of a static object seen from camera ``positions`` (object pose relative to positions[0])"""
    positions = np.asarray(positions, dtype=np.float64)
    boxes = []
    for p in positions:
        d = p - positions[0]
        boxes.append(project_box(Object3D(obj.X - d[0], obj.Y - d[1], obj.Z - d[2], obj.W, obj.H), K).as_tuple())
    return ObservationSet.from_arrays(np.array(boxes), positions)


@pytest.fixture
def K():
    return CameraIntrinsics(fx=205.5, fy=205.5, cx=320.5, cy=240.5)


@pytest.fixture
def clean_cfg():
    return GenerationConfig(name="normal")


@pytest.fixture
def perturbed_cfg():
    return GenerationConfig(name="perturb-all",
                            perturb=PerturbConfig(sigma_cam=0.01, sigma_box=0.001, replace_prob=0.1))


@pytest.fixture
def small_cfg():
    return GenerationConfig(name="small", n=4)


@pytest.fixture
def z_cfg():
    return GenerationConfig(name="z-normal", dp_max=(0.0, 0.0, 0.4625), z1_min=0.56,
                            intrinsics=CameraIntrinsics(fx=240.5, fy=240.5, cx=320.5, cy=240.5))


@pytest.fixture
def tiny_train_cfg(small_cfg):
    return TrainConfig(name="tiny", gen=small_cfg, iterations=20, batch_size=8, hidden_size=4, fc_width=8,
                       fc_layers=2, validation_sets=["small"], validation_size=40, seed=3)


@pytest.fixture
def tiny_params():
    return init_params(4, "rel", seed=11, hidden_size=5, fc_width=6, fc_layers=2, dtype=np.float64)


@pytest.fixture
def clean_set(clean_cfg):
    return build_benchmark_set(clean_cfg, "normal", "test", seed=7, size=300, threads=1)


@pytest.fixture
def small_set(small_cfg):
    return build_benchmark_set(small_cfg, "small", "validation", seed=5, size=40, threads=1)
