import numpy as np
import pytest

from jumpns.prm import MarkSpace
from jumpns.skeleton import SkeletonProblem
from jumpns.spde import NoiseCoefficient, SolverParams
from jumpns.spectral import make_grid, random_field


@pytest.fixture
def grid8():
    return make_grid(8)


@pytest.fixture
def small_problem(grid8):
    """Two-mark multiplicative noise on the smallest grid."""
    noise = NoiseCoefficient(np.array([1.0, -0.6]), random_field(11, grid8, amplitude=1.0), 0.3)
    space = MarkSpace([0.5, 0.5])
    params = SolverParams(dt=0.02, T=1.0, eps=0.1)
    return SkeletonProblem(random_field(5, grid8, amplitude=1.5), params, noise, space)
