import numpy as np
import pytest
from structlog.testing import capture_logs

from src.core.exceptions import PackingFormatError
from src.models.generator import RSAInit
from src.models.inference import EnsembleFailure, ModelEnsemble
from src.models.packing import BoundarySpec, Configuration, Provenance
from src.models.statistics import RadialFunction
from src.services import packing_io
from src.services.contact_service import contact_service
from src.services.tessellation_service import tessellation_service
from tests.conftest import hex_lattice, poisson_points


def test_configuration_round_trip_is_exact(tmp_path):
    config = poisson_points(25, 4.0, 3, seed=8).replace(
        provenance=Provenance(algorithm="rsa", parameters={"n": 25}, seed=2**63 + 5)
    )
    path = packing_io.write_configuration(config, tmp_path / "p.tsv")
    loaded = packing_io.read_configuration(path)
    assert np.array_equal(loaded.centers, config.centers)
    assert np.array_equal(loaded.radii, config.radii)
    assert loaded.boundary == config.boundary
    assert loaded.provenance == config.provenance


def test_rewriting_gives_identical_bytes(tmp_path):
    config = hex_lattice(4, 4)
    first = packing_io.write_configuration(config, tmp_path / "a.tsv").read_bytes()
    second = packing_io.write_configuration(
        packing_io.read_configuration(tmp_path / "a.tsv"), tmp_path / "b.tsv"
    ).read_bytes()
    assert first == second


def test_single_sphere_file(tmp_path):
    config = Configuration(
        centers=np.array([[1.0, 2.0, 3.0]]),
        radii=np.array([0.5]),
        boundary=BoundarySpec.unbounded(3),
    )
    path = packing_io.write_configuration(config, tmp_path / "one.tsv")
    loaded = packing_io.read_configuration(path)
    assert loaded.n == 1


def test_overlapping_spheres_load_with_a_warning(tmp_path):
    path = tmp_path / "overlap.txt"
    path.write_text("0 0 0\n0.5 0 0\n3 3 3\n")
    with capture_logs() as logs:
        config = packing_io.read_centers(path)
    assert config.n == 3
    assert config.provenance.algorithm == "import"
    warnings = [e["event"] for e in logs if e["log_level"] == "warning"]
    assert warnings == ["overlapping_spheres_loaded"]


def test_centre_lists_accept_commas_and_radii(tmp_path):
    path = tmp_path / "centres.csv"
    path.write_text("# exported\n0,0,0.6\n2,0,0.4\n")
    box = BoundarySpec.periodic_box(4.0, 4.0)
    config = packing_io.read_centers(path, dimension=2, boundary=box)
    assert config.radii.tolist() == [0.6, 0.4]
    assert config.boundary.kind == "periodic"


@pytest.mark.parametrize(
    "body",
    [
        "0 0\n1 1 1\n",
        "0 0 nan\n",
        "a b c\n",
    ],
)
def test_malformed_centre_lists(tmp_path, body):
    path = tmp_path / "bad.txt"
    path.write_text(body)
    with pytest.raises(PackingFormatError):
        packing_io.read_centers(path)


def test_centre_list_boundary_must_match_dimension(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("0 0 0\n")
    with pytest.raises(PackingFormatError):
        packing_io.read_centers(path, dimension=3, boundary=BoundarySpec.periodic_box(2.0, 2.0))


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(PackingFormatError):
        packing_io.read_configuration(tmp_path / "absent.tsv")


def test_configuration_records_are_checked(tmp_path):
    path = packing_io.write_configuration(hex_lattice(2, 2), tmp_path / "h.tsv")
    lines = path.read_text().splitlines()
    renumbered = [line if not line.startswith("1\t") else "7" + line[1:] for line in lines]
    path.write_text("\n".join(renumbered) + "\n")
    with pytest.raises(PackingFormatError):
        packing_io.read_configuration(path)

    headless = tmp_path / "headless.tsv"
    headless.write_text("0\t0\t0\t0.5\n")
    with pytest.raises(PackingFormatError):
        packing_io.read_configuration(headless)


def test_curve_round_trip(tmp_path):
    curve = RadialFunction(
        r=np.array([0.5, 1.5, 2.5]),
        values=np.array([0.0, 1.25, 0.9]),
        counts=np.array([0, 12, 30]),
        estimator="pair_correlation",
        correction="periodic",
        edges=np.array([0.0, 1.0, 2.0, 3.0]),
        standard_errors=np.array([0.0, 0.1, 0.05]),
    )
    path = packing_io.write_curve(curve, tmp_path / "g.tsv", shell_width=1.0)
    loaded = packing_io.read_curve(path)
    assert np.array_equal(loaded.values, curve.values)
    assert np.array_equal(loaded.edges, curve.edges)
    assert np.array_equal(loaded.standard_errors, curve.standard_errors)
    assert loaded.correction == "periodic"
    assert "# shell_width: 1.0" in path.read_text()


def test_empty_curve_writes_header_only(tmp_path):
    empty = RadialFunction(
        r=np.empty(0), values=np.empty(0), counts=np.empty(0, dtype=np.int64), estimator="k"
    )
    path = packing_io.write_curve(empty, tmp_path / "k.tsv")
    assert all(line.startswith("#") for line in path.read_text().splitlines())
    assert len(packing_io.read_curve(path).r) == 0


def test_edge_list_has_one_line_per_contact(tmp_path, hex_packing):
    net = contact_service.build_contact_network(
        hex_packing, tessellation_service.delaunay(hex_packing)
    )
    path = packing_io.write_edges(net, tmp_path / "edges.tsv")
    data = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    assert len(data) == len(net.edges) == 192


def test_ensemble_round_trip_with_sidecar(tmp_path):
    spec = RSAInit(n=10, dimension=2)
    ensemble = ModelEnsemble(
        spec=spec,
        master_seed=3,
        descriptors=("m1", "g_peaks"),
        columns=("m1", "g_peaks@1.000", "g_peaks@1.730", "g_peaks@2.000"),
        matrix=np.array([[0.3, 1.0, 2.0, 3.0], [0.31, 1.1, 2.1, 3.1]]),
        seeds=(2**64 - 1, 17),
        failures=(EnsembleFailure(index=2, seed=5, error="SaturationError", message="full"),),
        version="0.1.0",
    )
    path = packing_io.write_ensemble(ensemble, tmp_path / "e.tsv")
    assert packing_io.sidecar_path(path).exists()
    loaded = packing_io.read_ensemble(path)
    assert loaded.spec == spec
    assert loaded.seeds == ensemble.seeds
    assert np.array_equal(loaded.matrix, ensemble.matrix)
    assert loaded.failures == ensemble.failures

    packing_io.sidecar_path(path).unlink()
    bare = packing_io.read_ensemble(path)
    assert bare.descriptors == ("m1", "g_peaks")
    assert bare.spec is None


def test_ragged_ensemble_is_rejected(tmp_path):
    path = tmp_path / "e.tsv"
    path.write_text("seed\tm1\tq6\n1\t0.5\n")
    with pytest.raises(PackingFormatError):
        packing_io.read_ensemble(path)
