import numpy as np
import pytest

from cbflab.spectral import SpectralField, TorusGrid

TWO_PI = 2 * np.pi


@pytest.fixture
def g16():
    return TorusGrid(2, 16)


@pytest.fixture
def g32():
    return TorusGrid(2, 32)


@pytest.fixture
def g3d():
    return TorusGrid(3, 8)


def sine_x(grid):
    """u = (sin 2 pi x1, 0[, 0])."""
    funcs = [lambda *x: np.sin(TWO_PI * x[0])] + [lambda *x: 0.0 * x[0]] * (grid.dim - 1)
    return SpectralField.from_function(grid, funcs)


def taylor_green(grid):
    return SpectralField.from_function(
        grid,
        [lambda x, y: np.sin(TWO_PI * x) * np.cos(TWO_PI * y),
         lambda x, y: -np.cos(TWO_PI * x) * np.sin(TWO_PI * y)],
    )
