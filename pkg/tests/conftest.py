import math

import numpy as np
import pytest

from src.models.packing import BoundarySpec, Configuration

SQRT3 = math.sqrt(3.0)


def hex_lattice(rows: int = 8, cols: int = 8, spacing: float = 1.0) -> Configuration:
    """Periodic triangular lattice of touching discs (rows must be even)."""
    centers = [
        ((j + 0.5 * (i % 2)) * spacing, i * spacing * SQRT3 / 2)
        for i in range(rows)
        for j in range(cols)
    ]
    box = BoundarySpec.periodic_box(cols * spacing, rows * spacing * SQRT3 / 2)
    return Configuration(centers=np.array(centers), radii=np.full(len(centers), 0.5), boundary=box)


def fcc_lattice(cells: int = 3) -> Configuration:
    """Periodic FCC lattice with unit nearest-neighbour distance."""
    a = math.sqrt(2.0)
    basis = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    grid = np.array([[i, j, k] for i in range(cells) for j in range(cells) for k in range(cells)])
    centers = ((grid[:, None, :] + basis[None, :, :]) * a).reshape(-1, 3)
    box = BoundarySpec.periodic_box(*(3 * [cells * a]))
    return Configuration(centers=centers, radii=np.full(len(centers), 0.5), boundary=box)


def sc_lattice(cells: int = 4) -> Configuration:
    """Periodic simple cubic lattice with unit spacing."""
    grid = np.array(
        [[i, j, k] for i in range(cells) for j in range(cells) for k in range(cells)], dtype=float
    )
    box = BoundarySpec.periodic_box(*(3 * [float(cells)]))
    return Configuration(centers=grid, radii=np.full(len(grid), 0.5), boundary=box)


def chain(count: int = 3, dimension: int = 3, gap: float = 0.0) -> Configuration:
    """Zigzag chain rising along the last axis; neighbours touch when gap is 0.

    In 3D the kinks alternate between the x and y directions, so four or more
    centres are not coplanar.
    """
    step = 1.0 + gap
    angle = 0.1
    centers = np.zeros((count, dimension))
    centers[:, -1] = np.arange(count) * step * math.cos(angle)
    kink = step * math.sin(angle)
    if dimension >= 3:
        centers[1::4, 0] = kink
        centers[3::4, 1] = kink
    else:
        centers[1::2, 0] = kink
    return Configuration(
        centers=centers, radii=np.full(count, 0.5), boundary=BoundarySpec.unbounded(dimension)
    )


def poisson_points(count: int, edge: float, dimension: int, seed: int) -> Configuration:
    rng = np.random.default_rng(seed)
    centers = rng.random((count, dimension)) * edge
    box = BoundarySpec.periodic_box(*(dimension * [edge]))
    return Configuration(centers=centers, radii=np.full(count, 1e-3), boundary=box)


@pytest.fixture
def hex_packing():
    yield hex_lattice()


@pytest.fixture
def fcc_packing():
    yield fcc_lattice()


@pytest.fixture
def sc_packing():
    yield sc_lattice()


@pytest.fixture
def touching_chain():
    yield chain()


@pytest.fixture
def rng():
    yield np.random.default_rng(20240611)
