import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation
from scipy.special import lpmv
from scipy.stats import kendalltau

from src.core.exceptions import DimensionMismatchError
from src.generators import generate, recycle_jodrey_tory
from src.models.generator import JodreyTory
from src.models.order import BondSource
from src.services.analysis_service import describe
from src.services.contact_service import contact_service
from src.services.order_service import associated_legendre, order_service, steinhardt_q
from src.services.tessellation_service import tessellation_service
from tests.conftest import chain, poisson_points

FCC_Q4, FCC_Q6 = 0.190941, 0.574524
SC_Q4, SC_Q6 = 0.763763, 0.353553
PHI = (1.0 + math.sqrt(5.0)) / 2.0


def icosahedron_bonds():
    vertices = []
    for a in (-1.0, 1.0):
        for b in (-PHI, PHI):
            vertices += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    vertices = np.array(vertices)
    return vertices / np.linalg.norm(vertices, axis=1)[:, None]


def order_of(config, degrees=(4, 6)):
    tri = tessellation_service.delaunay(config)
    net = contact_service.build_contact_network(config, tri)
    bonds = order_service.bond_set(config, net, tri)
    return bonds, order_service.bond_orientational(config, bonds, degrees)


@pytest.mark.parametrize("l", [2, 4, 6])
def test_associated_legendre_matches_scipy(l):
    x = np.linspace(-1.0, 1.0, 41)
    table = associated_legendre(l, x)
    for m in range(l + 1):
        assert table[m] == pytest.approx(lpmv(m, l, x), abs=1e-9)


def test_fcc_lattice_order(fcc_packing):
    bonds, report = order_of(fcc_packing)
    assert set(bonds.sources) == {BondSource.CONTACTS}
    assert report.bond_sum[6] == pytest.approx(FCC_Q6, abs=1e-4)
    assert report.bond_sum[4] == pytest.approx(FCC_Q4, abs=1e-4)
    assert report.local_mean[6] == pytest.approx(FCC_Q6, abs=1e-4)
    assert report.excluded == ()


def test_simple_cubic_lattice_order(sc_packing):
    _, report = order_of(sc_packing)
    assert report.bond_sum[4] == pytest.approx(SC_Q4, abs=1e-4)
    assert report.bond_sum[6] == pytest.approx(SC_Q6, abs=1e-4)


def test_icosahedral_shell():
    bonds = icosahedron_bonds()
    assert len(bonds) == 12
    assert steinhardt_q(6, bonds) == pytest.approx(0.663325, abs=1e-5)
    assert steinhardt_q(4, bonds) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_q_is_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    bonds = rng.normal(size=(9, 3))
    bonds /= np.linalg.norm(bonds, axis=1)[:, None]
    turned = Rotation.from_rotvec(rng.normal(size=3)).apply(bonds)
    for l in (4, 6):
        assert steinhardt_q(l, turned) == pytest.approx(steinhardt_q(l, bonds), abs=1e-10)


def test_sparse_spheres_fall_back_to_delaunay_neighbours(touching_chain):
    tri = tessellation_service.delaunay(touching_chain)
    net = contact_service.build_contact_network(touching_chain, tri)
    bonds = order_service.bond_set(touching_chain, net, tri)
    assert set(bonds.sources) == {BondSource.NEIGHBORS}
    assert all(len(v) >= len(net.contacts_of(i)) for i, v in enumerate(bonds.vectors))

    contacts_only = order_service.bond_set(touching_chain, net)
    assert contacts_only.counts().tolist() == [1, 2, 1]
    report = order_service.bond_orientational(touching_chain, contacts_only)
    assert report.scored == (1,)
    assert report.excluded == (0, 2)
    assert np.isnan(report.per_sphere[6][0])


def test_bond_order_needs_three_dimensions(hex_packing):
    tri = tessellation_service.delaunay(hex_packing)
    net = contact_service.build_contact_network(hex_packing, tri)
    bonds = order_service.bond_set(hex_packing, net, tri)
    with pytest.raises(DimensionMismatchError):
        order_service.bond_orientational(hex_packing, bonds)


def test_hex_lattice_has_no_planar_defects(hex_packing):
    defects = order_service.planar_defect_count(tessellation_service.delaunay(hex_packing))
    assert defects.by_degree == {6: 64}
    assert defects.defects == 0
    assert defects.fraction == 0.0


def test_periodic_triangulation_has_mean_degree_six():
    config = poisson_points(200, 14.0, 2, seed=17)
    defects = order_service.planar_defect_count(tessellation_service.delaunay(config))
    total = sum(degree * count for degree, count in defects.by_degree.items())
    assert total == 6 * 200
    assert defects.defects > 0


def test_defects_can_be_restricted_to_interior_spheres():
    config = chain(5, dimension=2)
    tri = tessellation_service.delaunay(config)
    defects = order_service.planar_defect_count(tri, interior=[1, 2])
    assert defects.interior == 2


def test_planar_defects_need_two_dimensions(fcc_packing):
    with pytest.raises(DimensionMismatchError):
        order_service.planar_defect_count(tessellation_service.delaunay(fcc_packing))


@pytest.mark.slow
def test_recycling_jodrey_tory_raises_global_order():
    spec = JodreyTory(n=250, dimension=3)
    rounds, q6 = [], []
    for seed in range(10):
        start = generate(spec, seed=seed)
        for k, stage in enumerate([start, *recycle_jodrey_tory(start, spec, times=5, seed=seed)]):
            rounds.append(k)
            q6.append(describe(stage, ["q6"])[0])
    assert kendalltau(rounds, q6, alternative="greater").pvalue < 0.05
