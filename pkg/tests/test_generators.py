import itertools
import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.core.exceptions import (
    EventQueueOverflow,
    GeneratorFailure,
    SaturationError,
    ValidationFailure,
)
from src.core.geometry import min_gap, pair_search
from src.generators import (
    generate,
    get_generator,
    parse_generator_spec,
    recycle_jodrey_tory,
    redeposit,
)
from src.generators.central import outward_spots, seed_cluster, touching_positions
from src.generators.deposition import bulk_fraction
from src.generators.jodrey_tory import JodreyToryGenerator, separate_pairs
from src.generators.lubachevsky_stillinger import (
    EventDrivenSimulation,
    collision_time,
    elastic_collision,
)
from src.generators.rsa import RSAGenerator
from src.models.generator import (
    BennettCentral,
    JodreyTory,
    LubachevskyStillinger,
    RSAInit,
    ShakeRedeposit,
    VisscherBolsterli,
    VoldBallistic,
)
from src.models.packing import BoundaryKind
from tests.conftest import SQRT3, chain, poisson_points

TOUCH = 1e-7


def contact_counts(config):
    """Sphere-sphere contacts per sphere (gap within TOUCH)."""
    pairs = pair_search(config, 2.0 * float(config.radii.max()) + TOUCH)
    gap = pairs.distance - config.radii[pairs.i] - config.radii[pairs.j]
    touching = gap <= TOUCH
    return np.bincount(
        np.concatenate([pairs.i[touching], pairs.j[touching]]), minlength=config.n
    )


def test_rsa_places_non_overlapping_spheres_at_the_target_fraction():
    spec = RSAInit(n=40, dimension=2, target_fraction=0.25)
    config = generate(spec, seed=4)
    assert config.n == 40
    assert config.boundary.kind == BoundaryKind.PERIODIC
    assert np.all(config.radii == 0.5)
    assert min_gap(config) >= -1e-12
    assert config.volume_fraction() == pytest.approx(0.25)
    assert config.provenance.algorithm == "rsa"
    assert config.provenance.seed == 4


def test_same_seed_gives_the_same_packing():
    spec = RSAInit(n=25, dimension=3, target_fraction=0.2)
    first, again, other = generate(spec, 7), generate(spec, 7), generate(spec, 8)
    assert np.array_equal(first.centers, again.centers)
    assert not np.array_equal(first.centers, other.centers)


def test_rsa_refuses_a_box_that_is_too_full():
    with pytest.raises(ValidationFailure):
        generate(RSAInit(n=20, dimension=2, box_edge=3.0), seed=0)


def test_rsa_reports_saturation():
    spec = RSAInit(n=200, dimension=2, target_fraction=0.3, max_attempts_per_sphere=1)
    with pytest.raises(SaturationError) as caught:
        generate(spec, seed=0)
    assert caught.value.seed == 0
    assert caught.value.diagnostics["placed"] < 200


def test_unexpected_generator_errors_become_generator_failures(mocker):
    mocker.patch.object(RSAGenerator, "_build", side_effect=FloatingPointError("nan radius"))
    with pytest.raises(GeneratorFailure) as caught:
        generate(RSAInit(n=5, dimension=2), seed=3)
    assert caught.value.seed == 3
    assert caught.value.diagnostics["error_type"] == "FloatingPointError"
    assert isinstance(caught.value.__cause__, FloatingPointError)


def test_spec_parsing_dispatches_on_algorithm():
    spec = parse_generator_spec({"algorithm": "vold", "n": 10, "dimension": 2})
    assert isinstance(spec, VoldBallistic)
    assert type(get_generator(spec)).__name__ == "VoldGenerator"
    with pytest.raises(ValidationError):
        parse_generator_spec({"algorithm": "tetris", "n": 10})
    with pytest.raises(ValidationError):
        parse_generator_spec({"algorithm": "rsa", "n": 10, "p_stick": 0.5})


@pytest.mark.parametrize("dimension", [2, 3])
def test_seed_cluster_is_mutually_touching(dimension):
    cluster = seed_cluster(dimension, 0.5)
    assert len(cluster) == dimension + 1
    assert np.allclose(cluster.mean(axis=0), 0.0)
    distance = np.linalg.norm(cluster[:, None] - cluster[None, :], axis=2)
    assert np.allclose(distance[~np.eye(len(cluster), dtype=bool)], 1.0)


def test_central_placement_grows_from_the_origin():
    config = generate(BennettCentral(n=30, dimension=2), seed=1)
    assert config.boundary.kind == BoundaryKind.NONE
    assert min_gap(config) >= -1e-9
    # nearest free spot next to the starting triangle
    assert np.linalg.norm(config.centers[3]) == pytest.approx(2.0 / SQRT3)
    for k in range(3, config.n):
        earlier = np.linalg.norm(config.centers[:k] - config.centers[k], axis=1)
        assert np.count_nonzero(earlier <= 1.0 + 1e-9) >= 2


def test_central_placement_with_a_candidate_pool_is_reproducible():
    spec = BennettCentral(n=25, dimension=3, candidate_pool=4)
    first, again = generate(spec, 3), generate(spec, 3)
    assert np.array_equal(first.centers, again.centers)
    assert min_gap(first) >= -1e-9


def test_outward_spots_keep_the_far_side_of_a_pocket():
    pocket = np.array([[1.0, 2.0, 0.0], [-1.0, 2.0, 0.0], [0.0, 2.0, 1.5]])
    spots = touching_positions(pocket, np.full(3, 1.2))
    assert len(spots) == 2
    (kept,) = outward_spots(spots)
    assert kept[1] > 2.0
    through_origin = np.array([[0.0, 1.0], [0.0, -1.0]])
    assert len(outward_spots(touching_positions(through_origin, np.full(2, 1.5)))) == 2


def test_central_placement_enters_pockets_from_outside():
    config = generate(BennettCentral(n=40, dimension=3), seed=2)
    d = config.dimension
    for k in range(d + 1, config.n):
        centre = config.centers[k]
        gaps = np.linalg.norm(config.centers[:k] - centre, axis=1)
        touching = np.flatnonzero(gaps <= 1.0 + 1e-9)
        assert any(
            np.allclose(spot, centre, atol=1e-7)
            for group in itertools.combinations(touching, d)
            for spot in outward_spots(touching_positions(config.centers[list(group)], np.ones(d)))
        )


def test_sticky_deposition_stops_at_first_contact():
    config = generate(VoldBallistic(n=40, dimension=2, p_stick=1.0), seed=2)
    assert config.boundary.kind == BoundaryKind.OPEN_BASE
    heights = config.centers[:, -1]
    assert np.all(heights >= config.radii - 1e-9)
    on_base = np.abs(heights - config.radii) <= 1e-9
    assert np.all(on_base | (contact_counts(config) >= 1))


def test_visscher_bolsterli_spheres_come_to_rest():
    config = generate(VisscherBolsterli(n=60, dimension=2, k_drops=3), seed=5)
    heights = config.centers[:, -1]
    on_base = np.abs(heights - config.radii) <= 1e-9
    assert on_base.any()
    assert np.all(on_base | (contact_counts(config) >= 2))
    assert 0.0 < config.provenance.diagnostics["layer_fraction"] < 1.0


def test_first_layer_radii_are_jittered_in_two_dimensions():
    spec = VisscherBolsterli(n=30, dimension=2, lateral_extent=6.0, first_layer_size_jitter=0.02)
    config = generate(spec, seed=0)
    assert np.all(np.abs(config.radii[:6] - 0.5) <= 0.01)
    assert np.all(config.radii[6:] == 0.5)


def test_redeposition_keeps_spheres_apart():
    base = generate(VisscherBolsterli(n=30, dimension=2), seed=6)
    again = redeposit(base, seed=1)
    assert again.n == base.n
    assert min_gap(again) >= -1e-9
    assert again.provenance.algorithm == "redeposit"
    with pytest.raises(ValidationFailure):
        redeposit(poisson_points(10, 8.0, 2, seed=0), seed=1)


def test_shake_and_redeposit():
    spec = ShakeRedeposit(base=VisscherBolsterli(n=30, dimension=2), sweeps=5)
    assert spec.n == 30 and spec.dimension == 2
    config = generate(spec, seed=9)
    assert config.n == 30
    assert min_gap(config) >= -1e-9
    diagnostics = config.provenance.diagnostics
    assert diagnostics["collisions"] >= 0
    assert {"fraction_before", "fraction_after"} <= set(diagnostics)
    assert np.array_equal(config.centers, generate(spec, seed=9).centers)


def test_bulk_fraction_skips_base_and_surface():
    xs, zs = np.meshgrid(np.arange(10) + 0.5, np.arange(20) + 0.5)
    centers = np.column_stack([xs.ravel(), zs.ravel()])
    radii = np.full(len(centers), 0.5)
    assert bulk_fraction(centers, radii, 10.0) == pytest.approx(math.pi / 4.0)
    ragged = np.vstack([centers, [[0.5, 20.5], [2.5, 20.5]]])
    assert bulk_fraction(ragged, np.full(len(ragged), 0.5), 10.0) == pytest.approx(math.pi / 4.0)
    assert bulk_fraction(centers[:10], radii[:10], 10.0) is None


@pytest.mark.slow
def test_shaking_densifies_a_deposit():
    rises = []
    for seed in range(10):
        spec = ShakeRedeposit(base=VisscherBolsterli(n=2000, dimension=3))
        diagnostics = generate(spec, seed=seed).provenance.diagnostics
        rises.append(diagnostics["fraction_after"] - diagnostics["fraction_before"])
    assert np.mean(rises) == pytest.approx(0.009, abs=0.005)


def test_separation_leaves_an_isolated_pair_touching():
    centers = np.array([[1.0, 1.0], [1.6, 1.0]])
    moved, count = separate_pairs(centers, radius=0.5, box=np.array([5.0, 5.0]))
    assert count == 1
    assert np.linalg.norm(moved[1] - moved[0]) == pytest.approx(1.0)
    assert moved.mean(axis=0) == pytest.approx(centers.mean(axis=0))


def test_jodrey_tory_reaches_a_dense_non_overlapping_packing():
    spec = JodreyTory(n=30, dimension=3, cycles=300, initial_fraction=0.6)
    config = generate(spec, seed=11)
    assert config.boundary.kind == BoundaryKind.PERIODIC
    assert np.all(config.radii == 0.5)
    assert min_gap(config) >= -1e-9
    fraction = config.provenance.diagnostics["volume_fraction"]
    assert fraction == pytest.approx(config.volume_fraction())
    assert 0.2 < fraction < math.pi / math.sqrt(18.0)


def test_jodrey_tory_can_restart_from_its_own_output():
    spec = JodreyTory(n=20, dimension=3, cycles=100, initial_fraction=0.6)
    start = generate(spec, seed=2)
    stages = recycle_jodrey_tory(start, spec, times=2, seed=2)
    assert len(stages) == 2
    assert all(s.provenance.diagnostics["recycled"] for s in stages)
    assert all(min_gap(s) >= -1e-9 for s in stages)
    with pytest.raises(ValidationFailure):
        recycle_jodrey_tory(start, spec, times=0, seed=2)
    with pytest.raises(ValidationFailure):
        JodreyToryGenerator(spec, initial=chain(20))


def test_head_on_collision_time():
    r = np.array([2.0, 0.0])
    assert collision_time(r, np.array([-1.0, 0.0]), 1.0, 0.0)[0] == pytest.approx(1.0)
    assert collision_time(r, np.zeros(2), 0.0, 0.5)[0] == pytest.approx(4.0)
    assert np.isinf(collision_time(r, np.array([1.0, 0.0]), 1.0, 0.0)[0])


def test_elastic_collision_conserves_momentum_and_energy():
    vi, vj = np.array([1.0, 0.5]), np.array([-0.5, 0.2])
    normal = np.array([1.0, 0.0])
    wi, wj = elastic_collision(vi, vj, normal)
    assert wi + wj == pytest.approx(vi + vj)
    assert wi @ wi + wj @ wj == pytest.approx(vi @ vi + vj @ vj)
    assert wi == pytest.approx([-0.5, 0.5])

    gi, gj = elastic_collision(vi, vj, normal, growth=0.1)
    assert gi + gj == pytest.approx(vi + vj)
    assert (gj - gi) @ normal == pytest.approx(-((vj - vi) @ normal) + 0.1 * 2)


def test_event_driven_growth_conserves_momentum(rng):
    positions = rng.random((12, 2)) * 4.0
    velocities = rng.standard_normal((12, 2))
    velocities -= velocities.mean(axis=0)
    sim = EventDrivenSimulation(positions, velocities, 4.0, growth_rate=0.05)
    for _ in range(300):
        if sim.step() is None:
            break
    assert sim.momentum() == pytest.approx(np.zeros(2), abs=1e-9)
    assert sim.min_distance() >= sim.sigma - 1e-9


def test_lubachevsky_stillinger_grows_a_valid_packing():
    spec = LubachevskyStillinger(n=16, dimension=2, growth_rate=0.05, max_events=4000)
    config = generate(spec, seed=3)
    assert min_gap(config) >= -1e-9
    diagnostics = config.provenance.diagnostics
    assert diagnostics["reason"] in {"jammed", "growth_cap", "max_events"}
    assert 0.0 < diagnostics["volume_fraction"] <= math.pi / math.sqrt(12.0) + 1e-9


def test_event_queue_overflow_is_a_generator_failure():
    spec = LubachevskyStillinger(n=16, dimension=2, max_queue=1)
    with pytest.raises(EventQueueOverflow) as caught:
        generate(spec, seed=0)
    assert isinstance(caught.value, GeneratorFailure)


@pytest.mark.slow
def test_three_dimensional_deposition():
    config = generate(VisscherBolsterli(n=150, dimension=3, k_drops=2), seed=1)
    heights = config.centers[:, -1]
    on_base = np.abs(heights - config.radii) <= 1e-9
    assert min_gap(config) >= -1e-9
    assert np.all(on_base | (contact_counts(config) >= 3))


@pytest.mark.slow
def test_three_dimensional_event_driven_growth():
    spec = LubachevskyStillinger(n=64, dimension=3, growth_rate=0.02, max_events=40_000)
    config = generate(spec, seed=2)
    assert min_gap(config) >= -1e-9
    assert config.volume_fraction() < math.pi / math.sqrt(18.0)


def test_event_budget_grows_with_the_sphere_count():
    config = generate(LubachevskyStillinger(n=8, dimension=2, growth_rate=0.2), seed=1)
    assert config.provenance.diagnostics["event_budget"] == 5000 * 8
    capped = generate(LubachevskyStillinger(n=8, dimension=2, max_events=50), seed=1)
    assert capped.provenance.diagnostics["event_budget"] == 50
    assert capped.provenance.diagnostics["events"] <= 50


@pytest.mark.slow
def test_slow_event_driven_growth_packs_discs_densely():
    config = generate(LubachevskyStillinger(n=1000, dimension=2), seed=0)
    assert config.provenance.diagnostics["volume_fraction"] >= 0.85
