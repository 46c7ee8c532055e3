"""Shared meshes, configurations and solved states."""

import pytest

from shapeopt.config import load_config
from shapeopt.mesh import generate_mesh
from shapeopt.optimizer import evaluate_state

from .helpers import CENTER_DISC, COARSE_SETTINGS


@pytest.fixture(scope="session")
def disc_mesh():
    """Body-fitted mesh of a centered disc of radius 0.2."""
    return generate_mesh(CENTER_DISC, 64, 15)


@pytest.fixture(scope="session")
def reference_config():
    return load_config()


@pytest.fixture(scope="session")
def reference_state(reference_config):
    """State, adjoint and tensors of the reference experiment at iteration 0."""
    opt = reference_config.opt_config()
    mesh = generate_mesh(opt.initial_shape, opt.n_interface, opt.grid_res)
    return evaluate_state(mesh, opt, 0, opt.sigma0)


@pytest.fixture(scope="session")
def coarse_config():
    return load_config(None, **COARSE_SETTINGS)


@pytest.fixture(scope="session")
def coarse_state(coarse_config):
    opt = coarse_config.opt_config()
    mesh = generate_mesh(opt.initial_shape, opt.n_interface, opt.grid_res)
    return evaluate_state(mesh, opt, 0, opt.sigma0)
