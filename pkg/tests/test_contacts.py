import numpy as np
import pytest

from src.core.exceptions import ContactRuleError, TriangulationError
from src.generators import generate
from src.models.generator import VisscherBolsterli, VoldBallistic
from src.models.network import GaussianRule, HardTolerance, StochasticDecision
from src.models.packing import BoundarySpec, Configuration
from src.services.contact_service import contact_service, gravity_stable
from src.services.tessellation_service import tessellation_service
from tests.conftest import SQRT3, chain, hex_lattice


def contacts_of(config, rule=None):
    tri = tessellation_service.delaunay(config)
    return tri, contact_service.build_contact_network(config, tri, rule)


def test_fcc_lattice_has_twelve_contacts(fcc_packing):
    _, net = contacts_of(fcc_packing)
    assert np.all(net.degrees() == 12)
    assert np.all(np.abs(net.gaps) < 1e-9)
    report = contact_service.coordination_histogram(net)
    assert report.interior_histogram == {12: fcc_packing.n}
    assert report.mean == 12.0


def test_simple_cubic_lattice_has_six_contacts(sc_packing):
    _, net = contacts_of(sc_packing)
    assert np.all(net.degrees() == 6)


def test_touching_chain_is_a_path(touching_chain):
    tri, net = contacts_of(touching_chain)
    assert net.edge_list == [(0, 1), (1, 2)]
    partition = contact_service.classify_spheres(touching_chain, tri, net)
    assert partition.interior == ()
    assert set(partition.free_boundary) == {0, 1, 2}


def test_gap_just_above_tolerance_is_not_a_contact():
    config = chain(3, gap=2e-6)
    _, net = contacts_of(config, HardTolerance(epsilon=1e-6))
    assert len(net.edges) == 0
    _, loose = contacts_of(config, HardTolerance(epsilon=1e-5))
    assert loose.edge_list == [(0, 1), (1, 2)]


def test_deterministic_gaussian_rule_uses_its_cutoff():
    config = chain(4, gap=0.01)
    _, net = contacts_of(config, GaussianRule(sigma=0.005, cutoff=0.02))
    assert len(net.edges) == 3
    _, none = contacts_of(config, GaussianRule(sigma=0.005, cutoff=0.005))
    assert len(none.edges) == 0


def test_seeded_gaussian_rule_is_reproducible():
    config = chain(12, gap=0.01)
    rule = GaussianRule(
        sigma=0.01, cutoff=0.01, decision=StochasticDecision.SEEDED, seed=42
    )
    _, first = contacts_of(config, rule)
    _, again = contacts_of(config, rule)
    assert first.edge_list == again.edge_list


def test_non_finite_rule_is_rejected(hex_packing):
    tri = tessellation_service.delaunay(hex_packing)
    with pytest.raises(ContactRuleError):
        contact_service.build_contact_network(hex_packing, tri, HardTolerance(epsilon=float("inf")))


def test_triangulation_must_match_configuration(hex_packing):
    tri = tessellation_service.delaunay(hex_lattice(4, 4))
    with pytest.raises(TriangulationError):
        contact_service.build_contact_network(hex_packing, tri)


def test_hard_walls_register_contacts():
    config = Configuration(
        centers=np.array([[0.5, 2.0], [2.0, 2.0], [3.5, 1.0]]),
        radii=np.full(3, 0.5),
        boundary=BoundarySpec.hard_box(4.0, 4.0),
    )
    _, net = contacts_of(config)
    walls = {(w.sphere, w.axis, w.side) for w in net.wall_contacts}
    assert walls == {(0, 0, "low"), (2, 0, "high")}


def test_hex_lattice_spheres_are_jammed(hex_packing):
    _, net = contacts_of(hex_packing)
    assert contact_service.local_jam_check(hex_packing, net, 0)
    summary = contact_service.jam_summary(hex_packing, net)
    assert summary.jammed_fraction == 1.0
    assert summary.rattler_fraction == 0.0


def test_shrunken_sphere_is_a_rattler(hex_packing):
    radii = hex_packing.radii.copy()
    radii[27] = 0.4
    config = hex_packing.replace(radii=radii)
    _, net = contacts_of(config)
    assert net.degrees()[27] == 0
    summary = contact_service.jam_summary(config, net)
    assert summary.rattlers == (27,)
    assert summary.rattler_fraction == pytest.approx(1 / 64)


def test_chain_middle_is_not_jammed(touching_chain):
    _, net = contacts_of(touching_chain)
    assert not contact_service.local_jam_check(touching_chain, net, 1)


def test_gravity_stability_of_a_cradled_disc():
    down_left = np.array([-0.5, -SQRT3 / 2])
    down_right = np.array([0.5, -SQRT3 / 2])
    assert gravity_stable(np.array([down_left, down_right]), 2)
    assert not gravity_stable(np.array([down_left]), 2)
    assert not gravity_stable(np.empty((0, 2)), 2)


def test_resting_disc_on_base_is_stable_under_gravity():
    config = Configuration(
        centers=np.array([[1.0, 0.5], [2.0, 0.5], [1.5, 0.5 + SQRT3 / 2], [4.0, 3.0]]),
        radii=np.full(4, 0.5),
        boundary=BoundarySpec.open_with_base(6.0),
    )
    _, net = contacts_of(config)
    assert contact_service.local_jam_check(config, net, 2, gravity=True)
    assert contact_service.local_jam_check(config, net, 0, gravity=True)
    assert not contact_service.local_jam_check(config, net, 3, gravity=True)


def test_connected_components_are_ordered_by_smallest_sphere():
    config = Configuration(
        centers=np.array([[5.0, 5.0], [0.0, 0.0], [1.0, 0.0], [0.5, SQRT3 / 2]]),
        radii=np.full(4, 0.5),
        boundary=BoundarySpec.unbounded(2),
    )
    _, net = contacts_of(config)
    components = contact_service.connected_components(net)
    assert components.count == 2
    assert components.labels == (0, 1, 1, 1)
    assert components.sizes == (1, 3)


@pytest.mark.slow
@pytest.mark.parametrize(
    "spec",
    [VisscherBolsterli(n=500, dimension=3), VoldBallistic(n=500, dimension=3, p_stick=0.0)],
    ids=["visscher_bolsterli", "vold"],
)
def test_deposited_spheres_rest_under_gravity(spec):
    config = generate(spec, seed=3)
    _, net = contacts_of(config)
    unstable = [
        i for i in range(config.n) if not contact_service.local_jam_check(config, net, i, True)
    ]
    assert unstable == []
