import math

import numpy as np
import pytest

from src.core.exceptions import DimensionMismatchError, ValidationFailure
from src.models.packing import BoundarySpec, Configuration
from src.models.statistics import GridDesign, PointPattern, RandomDesign, Window
from src.services.spatial_stats_service import (
    SpatialStatsService,
    ball_box_volume,
    point_pattern,
    sample_points,
    spatial_stats_service,
)
from tests.conftest import SQRT3, poisson_points

HEX_FRACTION = math.pi / (2.0 * SQRT3)
# deepest hole of the triangular lattice, measured from the disc surfaces
HEX_HOLE = 1.0 / SQRT3 - 0.5


@pytest.fixture(scope="module")
def poisson():
    return point_pattern(poisson_points(400, 20.0, 2, seed=21))


def test_ball_box_volume():
    lower, upper = np.zeros(2), np.full(2, 2.0)
    assert ball_box_volume(np.array([1.0, 1.0]), 0.5, lower, upper) == pytest.approx(math.pi / 4)
    assert ball_box_volume(np.zeros(2), 1.0, lower, upper) == pytest.approx(math.pi / 4, rel=1e-8)
    assert ball_box_volume(np.array([5.0, 5.0]), 1.0, lower, upper) == 0.0
    octant = ball_box_volume(np.zeros(3), 1.0, np.zeros(3), np.ones(3))
    assert octant == pytest.approx(math.pi / 6, rel=1e-6)


def test_exact_volume_fraction_of_hex_lattice(hex_packing):
    exact = spatial_stats_service.exact_volume_fraction(hex_packing)
    assert exact == pytest.approx(HEX_FRACTION, rel=1e-6)
    assert exact == pytest.approx(hex_packing.volume_fraction(), rel=1e-6)


def test_sampled_volume_fraction_agrees_with_quadrature(hex_packing):
    grid = GridDesign(spacing=0.02)
    solid = spatial_stats_service.volume_fraction(hex_packing, design=grid)
    void = spatial_stats_service.volume_fraction(hex_packing, design=grid, phase="void")
    assert solid.value == pytest.approx(HEX_FRACTION, abs=0.01)
    assert solid.value + void.value == pytest.approx(1.0)
    assert solid.samples == 400 * 346

    sampled = spatial_stats_service.volume_fraction(hex_packing)
    assert abs(sampled.value - HEX_FRACTION) < 5 * sampled.standard_error


def test_sub_window_of_a_hard_box():
    config = Configuration(
        centers=np.array([[1.0, 1.0]]),
        radii=np.array([0.5]),
        boundary=BoundarySpec.hard_box(4.0, 4.0),
    )
    window = Window.box([0.0, 0.0], [2.0, 2.0])
    assert spatial_stats_service.exact_volume_fraction(config, window) == pytest.approx(
        math.pi / 16, rel=1e-8
    )
    with pytest.raises(ValidationFailure):
        spatial_stats_service.volume_fraction(config, Window.box([0.0, 0.0], [5.0, 5.0]))
    with pytest.raises(ValidationFailure):
        spatial_stats_service.volume_fraction(config, Window.box([0, 0, 0], [1, 1, 1]))


def test_window_bounds_must_agree():
    with pytest.raises(DimensionMismatchError):
        Window.box([0.0, 0.0], [1.0, 1.0, 1.0])


def test_grid_design_is_offset_by_half_a_spacing():
    points = sample_points(Window.box([0.0, 0.0], [1.0, 0.5]), GridDesign(spacing=0.25))
    assert len(points) == 8
    assert points.min(axis=0) == pytest.approx([0.125, 0.125])
    first = sample_points(Window.box([0, 0], [1, 1]), RandomDesign(count=50, seed=4))
    again = sample_points(Window.box([0, 0], [1, 1]), RandomDesign(count=50, seed=4))
    assert np.array_equal(first, again)


def test_local_volume_fraction(hex_packing):
    field = spatial_stats_service.local_volume_fraction(hex_packing, cell_size=2.0)
    assert field.values.shape == (4, 3)
    assert np.nanmean(field.values) == pytest.approx(HEX_FRACTION, abs=0.05)
    assert not field.high_variance
    assert field.profile(0).shape == (4,)

    fine = spatial_stats_service.local_volume_fraction(hex_packing, cell_size=0.5)
    assert fine.high_variance
    with pytest.raises(ValidationFailure):
        spatial_stats_service.local_volume_fraction(hex_packing, cell_size=20.0)


def test_covariance_at_zero_lag_is_the_volume_fraction(hex_packing):
    result = spatial_stats_service.covariance(
        hex_packing, [0.0, 0.25, 1.0], mixed=[((0.3, 0.0), (0.3, 0.0))]
    )
    assert result.m2.values[0] == pytest.approx(result.volume_fraction)
    assert result.m2.correction == "periodic"
    assert np.all(result.m2.values <= result.volume_fraction + 1e-12)
    moment = result.mixed[0]
    assert moment.m3 == pytest.approx(moment.m2)
    assert moment.m110 == pytest.approx(0.0)


def test_covariance_validates_lags():
    config = Configuration(
        centers=np.array([[2.0, 2.0]]),
        radii=np.array([0.5]),
        boundary=BoundarySpec.hard_box(4.0, 4.0),
    )
    with pytest.raises(ValidationFailure):
        spatial_stats_service.covariance(config, [-0.1])
    with pytest.raises(ValidationFailure):
        spatial_stats_service.covariance(config, [2.5])
    result = spatial_stats_service.covariance(config, [0.0, 0.5])
    assert result.m2.correction == "translated-window"


def test_spherical_contact_distribution(hex_packing):
    grid = np.linspace(0.01, 0.1, 10)
    s = spatial_stats_service.spherical_contact(hex_packing, grid)
    assert np.all(np.diff(s.values) >= 0)
    assert s.value_at(0.1) == 1.0
    quartiles = spatial_stats_service.contact_distance_quantiles(hex_packing)
    assert np.all(np.diff(quartiles) >= 0)
    assert quartiles[-1] <= HEX_HOLE + 1e-9


def test_k_function_of_a_poisson_pattern(poisson):
    r = np.array([1.0, 2.0, 3.0])
    k = spatial_stats_service.k_function(poisson, r)
    assert k.correction == "periodic"
    assert k.values == pytest.approx(math.pi * r**2, rel=0.2)
    l_function = spatial_stats_service.l_function(k, 2)
    assert l_function.values == pytest.approx(r, rel=0.1)


@pytest.mark.parametrize("correction", ["minus", "translation"])
def test_edge_corrected_k_function(poisson, correction):
    pattern = PointPattern(points=poisson.points, window=poisson.window, periodic=False)
    r = np.array([1.0, 2.0, 3.0])
    k = spatial_stats_service.k_function(pattern, r, correction=correction)
    assert k.correction == correction
    assert k.values == pytest.approx(math.pi * r**2, rel=0.2)


def test_k_function_rejects_long_distances(poisson):
    with pytest.raises(ValidationFailure):
        spatial_stats_service.k_function(poisson, [1.0, 10.0])
    with pytest.raises(ValidationFailure):
        spatial_stats_service.k_function(poisson, [2.0, 1.0])


def test_pair_correlation_of_a_poisson_pattern_is_flat(poisson):
    g, rdf = spatial_stats_service.pair_correlation(poisson, shell_width=0.25, r_max=4.0)
    assert len(g.values) == 16
    assert np.mean(g.values[4:]) == pytest.approx(1.0, abs=0.1)
    assert rdf.values[8] == pytest.approx(
        poisson.intensity * 2 * math.pi * g.r[8] * g.values[8]
    )
    with pytest.raises(ValidationFailure):
        spatial_stats_service.pair_correlation(poisson, r_max=15.0)


def test_pair_correlation_of_hex_lattice_peaks_at_contact(hex_packing):
    service = SpatialStatsService(shell_width=0.05)
    g, _ = service.pair_correlation(point_pattern(hex_packing), r_max=3.0)
    assert g.value_at(0.5) == 0.0
    near_contact = (g.r > 0.9) & (g.r < 1.1)
    assert g.values[near_contact].max() > 5.0
    assert int(g.counts.sum()) > 0


def test_neighbour_functions(poisson):
    r = np.linspace(0.05, 1.0, 20)
    result = spatial_stats_service.neighbour_functions(poisson, r, k_max=3)
    assert set(result.d_k) == {1, 2, 3}
    assert np.all(np.diff(result.d.values) >= 0)
    assert np.all(result.d_k[1].values >= result.d_k[2].values)
    assert np.all(result.d_k[2].values >= result.d_k[3].values)
    assert np.all(np.diff(result.h_s.values) >= 0)
    assert result.j.value_at(0.2) == pytest.approx(1.0, abs=0.1)
    with pytest.raises(ValidationFailure):
        spatial_stats_service.neighbour_functions(poisson, r, k_max=0)


def test_quadrat_counts(poisson):
    counts = spatial_stats_service.local_intensity_disorder(poisson, cell_size=2.0)
    assert counts.counts.shape == (10, 10)
    assert counts.counts.sum() == 400
    assert counts.mean == pytest.approx(4.0)
    assert counts.ratio == pytest.approx(1.0, abs=0.5)
    with pytest.raises(ValidationFailure):
        spatial_stats_service.local_intensity_disorder(poisson, cell_size=8.0)
