"""
Общие фикстуры тестов
"""

import numpy as np
import pytest

from ansatz import Ansatz, LayerParams
from lattice import LatticeGeom


@pytest.fixture
def geom2():
    return LatticeGeom(2, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_layers(rng: np.random.Generator, n_layers: int):
    layers = []
    for _ in range(n_layers):
        y, z = rng.uniform(0.15, 0.8, size=2) * rng.choice([-1.0, 1.0], size=2)
        layers.append(LayerParams(float(y), float(z)))
    return layers


@pytest.fixture
def make_ansatz(geom2, rng):
    """Фабрика анзацев L=2 со случайными параметрами"""

    def factory(n_layers: int = 1, geom=None):
        return Ansatz(geom or geom2, random_layers(rng, n_layers))

    return factory
