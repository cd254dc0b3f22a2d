"""Text interchange formats: packings, curves, edge lists, cell records and ensembles.

Floats are written with 17 significant digits so that reading back a file
reproduces every value bit for bit. No timestamps are written, so reruns give
byte-identical files.
"""

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np
from pydantic import ValidationError

from src.core.config import settings
from src.core.exceptions import PackingFormatError, ValidationFailure
from src.core.geometry import min_gap
from src.core.logging import get_logger
from src.models.inference import EnsembleFailure, ModelEnsemble, descriptor_of
from src.models.network import ContactNetwork
from src.models.order import OrderReport
from src.models.packing import BoundarySpec, Configuration, Provenance
from src.models.resistance import BulkResistance, ResistorNetwork
from src.models.statistics import RadialFunction
from src.models.tessellation import CellRecord

logger = get_logger(__name__)

FORMAT_VERSION = 1
CONFIGURATION_MAGIC = "packing-lab configuration"
CURVE_MAGIC = "packing-lab curve"
AXES = "xyz"


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def sidecar_path(path: Path) -> Path:
    """Provenance record written next to an output file."""
    path = Path(path)
    return path.with_name(path.name + ".json")


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(record: Any) -> str:
    return json.dumps(record, sort_keys=True, default=_jsonable)


@contextmanager
def _writer(path: Path) -> Iterator[TextIO]:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        handle = open(path, "w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise ValidationFailure(f"cannot write {path}: {exc}") from exc
    with handle:
        yield handle


def _read_lines(path: Path) -> List[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise PackingFormatError(f"cannot read {path}: {exc}") from exc


def _header(lines: Sequence[str]) -> Tuple[Dict[str, str], List[str]]:
    """Split '# key: value' header lines from data lines."""
    header: Dict[str, str] = {}
    data: List[str] = []
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition(":")
            if sep:
                header[key.strip()] = value.strip()
            continue
        data.append(stripped)
    return header, data


def _floats(fields: Sequence[str], path: Path, line: int) -> List[float]:
    try:
        values = [float(f) for f in fields]
    except ValueError as exc:
        raise PackingFormatError(f"{path}:{line}: {exc}") from exc
    if not all(np.isfinite(values)):
        raise PackingFormatError(f"{path}:{line}: non-finite value")
    return values


def write_json(path: Path, record: Dict[str, Any]) -> Path:
    with _writer(path) as handle:
        handle.write(json.dumps(record, sort_keys=True, indent=2, default=_jsonable))
        handle.write("\n")
    return Path(path)


def write_provenance(path: Path, record: Dict[str, Any]) -> Path:
    """Write the reproducibility sidecar of `path`."""
    return write_json(sidecar_path(path), record)


# configurations


def write_configuration(config: Configuration, path: Path) -> Path:
    d = config.dimension
    with _writer(path) as handle:
        handle.write(f"# {CONFIGURATION_MAGIC}\n")
        handle.write(f"# format: {FORMAT_VERSION}\n")
        handle.write(f"# dimension: {d}\n")
        handle.write(f"# boundary: {dumps(config.boundary.model_dump(mode='json'))}\n")
        handle.write("# units: diameter\n")
        handle.write(f"# provenance: {dumps(config.provenance.model_dump())}\n")
        handle.write("# columns: index " + " ".join(AXES[:d]) + " radius\n")
        for i, (centre, radius) in enumerate(zip(config.centers, config.radii)):
            handle.write("\t".join([str(i), *(fmt(x) for x in centre), fmt(radius)]) + "\n")
    return Path(path)


def read_configuration(path: Path) -> Configuration:
    """Parse a configuration file; overlapping spheres are loaded with a warning."""
    path = Path(path)
    header, data = _header(_read_lines(path))
    try:
        version = int(header["format"])
        dimension = int(header["dimension"])
        boundary = BoundarySpec.model_validate(json.loads(header["boundary"]))
        provenance = Provenance.model_validate(json.loads(header.get("provenance", "{}")))
    except (KeyError, ValueError, ValidationError) as exc:
        raise PackingFormatError(f"{path}: malformed header ({exc})") from exc
    if version != FORMAT_VERSION:
        raise PackingFormatError(f"{path}: unsupported format version {version}")
    if boundary.dimension != dimension:
        raise PackingFormatError(
            f"{path}: header dimension {dimension} but {boundary.dimension}D boundary"
        )
    centers, radii = [], []
    for k, line in enumerate(data):
        fields = line.split()
        if len(fields) != dimension + 2:
            raise PackingFormatError(
                f"{path}: record {k} has {len(fields)} fields, expected {dimension + 2}"
            )
        if fields[0] != str(k):
            raise PackingFormatError(f"{path}: record {k} has index {fields[0]}")
        values = _floats(fields[1:], path, k)
        centers.append(values[:dimension])
        radii.append(values[dimension])
    return _validated(
        np.array(centers, dtype=np.float64).reshape(-1, dimension),
        np.array(radii, dtype=np.float64),
        boundary,
        provenance,
        path,
    )


def read_centers(
    path: Path,
    dimension: int = 3,
    radius: float = 0.5,
    boundary: Optional[BoundarySpec] = None,
) -> Configuration:
    """Bare whitespace-separated centre lists ("x y z [r]" per line), e.g. tomography exports."""
    path = Path(path)
    boundary = boundary or BoundarySpec.unbounded(dimension)
    if boundary.dimension != dimension:
        raise PackingFormatError(f"{dimension}D centres in a {boundary.dimension}D boundary")
    _, data = _header(_read_lines(path))
    centers, radii = [], []
    for k, line in enumerate(data):
        fields = line.replace(",", " ").split()
        if len(fields) not in (dimension, dimension + 1):
            raise PackingFormatError(
                f"{path}: line {k} has {len(fields)} fields, "
                f"expected {dimension} or {dimension + 1}"
            )
        values = _floats(fields, path, k)
        centers.append(values[:dimension])
        radii.append(values[dimension] if len(values) > dimension else radius)
    provenance = Provenance(algorithm="import", parameters={"source": path.name})
    return _validated(
        np.array(centers, dtype=np.float64).reshape(-1, dimension),
        np.array(radii, dtype=np.float64),
        boundary,
        provenance,
        path,
    )


def _validated(
    centers: np.ndarray,
    radii: np.ndarray,
    boundary: BoundarySpec,
    provenance: Provenance,
    path: Path,
) -> Configuration:
    try:
        config = Configuration(
            centers=centers, radii=radii, boundary=boundary, provenance=provenance
        )
    except ValidationError as exc:
        raise PackingFormatError(f"{path}: {exc}") from exc
    if config.n >= 2:
        gap = min_gap(config)
        if gap < -settings.overlap_tolerance:
            logger.warning("overlapping_spheres_loaded", path=str(path), n=config.n, min_gap=gap)
    return config


# curves


def write_curve(rf: RadialFunction, path: Path, **metadata: Any) -> Path:
    """Tab-separated curve with '#' metadata lines."""
    columns = ["r", "value", "count"]
    if rf.edges is not None:
        columns += ["r_low", "r_high"]
    if rf.standard_errors is not None:
        columns.append("standard_error")
    low, high = rf.bounds()
    with _writer(path) as handle:
        handle.write(f"# {CURVE_MAGIC}\n")
        handle.write(f"# estimator: {rf.estimator}\n")
        handle.write(f"# correction: {rf.correction}\n")
        for key in sorted(metadata):
            handle.write(f"# {key}: {dumps(metadata[key])}\n")
        handle.write("# columns: " + " ".join(columns) + "\n")
        for k in range(len(rf.r)):
            fields = [fmt(rf.r[k]), fmt(rf.values[k]), str(int(rf.counts[k]))]
            if rf.edges is not None:
                fields += [fmt(low[k]), fmt(high[k])]
            if rf.standard_errors is not None:
                fields.append(fmt(rf.standard_errors[k]))
            handle.write("\t".join(fields) + "\n")
    return Path(path)


def read_curve(path: Path) -> RadialFunction:
    path = Path(path)
    header, data = _header(_read_lines(path))
    if "estimator" not in header or "columns" not in header:
        raise PackingFormatError(f"{path}: not a curve file")
    columns = header["columns"].split()
    rows = [line.split("\t") for line in data]
    if any(len(row) != len(columns) for row in rows):
        raise PackingFormatError(f"{path}: ragged curve table")
    table = {c: [row[k] for row in rows] for k, c in enumerate(columns)}
    r = np.array([float(v) for v in table["r"]], dtype=np.float64)
    edges = None
    if "r_low" in table:
        low = [float(v) for v in table["r_low"]]
        high = [float(v) for v in table["r_high"]]
        edges = np.array(low + high[-1:], dtype=np.float64) if low else np.array([0.0])
    errors = (
        np.array([float(v) for v in table["standard_error"]])
        if "standard_error" in table
        else None
    )
    try:
        return RadialFunction(
            r=r,
            values=np.array([float(v) for v in table["value"]], dtype=np.float64),
            counts=np.array([int(v) for v in table["count"]], dtype=np.int64),
            estimator=header["estimator"],
            correction=header.get("correction", "none"),
            edges=edges,
            standard_errors=errors,
        )
    except (ValueError, ValidationError) as exc:
        raise PackingFormatError(f"{path}: {exc}") from exc


# networks and per-sphere records


def write_edges(net: ContactNetwork, path: Path) -> Path:
    """Contact edge list, one "i j gap" line per contact."""
    with _writer(path) as handle:
        handle.write(f"# rule: {dumps(net.rule.model_dump(mode='json'))}\n")
        handle.write("# columns: i j gap\n")
        for (i, j), gap in zip(net.edges.reshape(-1, 2), net.gaps):
            handle.write(f"{int(i)}\t{int(j)}\t{fmt(gap)}\n")
    return Path(path)


def write_wall_contacts(net: ContactNetwork, path: Path) -> Path:
    with _writer(path) as handle:
        handle.write("# columns: i axis side gap\n")
        for wall in net.wall_contacts:
            handle.write(f"{wall.sphere}\t{wall.axis}\t{wall.side}\t{fmt(wall.gap)}\n")
    return Path(path)


def write_cell_records(records: Sequence[CellRecord], path: Path) -> Path:
    fields = list(CellRecord.model_fields)
    with _writer(path) as handle:
        handle.write("# columns: " + " ".join(fields) + "\n")
        for record in records:
            values = [getattr(record, f) for f in fields]
            handle.write(
                "\t".join(str(v) if isinstance(v, int) else fmt(v) for v in values) + "\n"
            )
    return Path(path)


def write_order(report: OrderReport, path: Path) -> Path:
    """Per-sphere q_l columns; excluded spheres are written as nan."""
    degrees = sorted(report.per_sphere)
    n = len(report.per_sphere[degrees[0]]) if degrees else 0
    with _writer(path) as handle:
        for l in degrees:
            handle.write(f"# q{l}_local_mean: {fmt(report.local_mean[l])}\n")
            handle.write(f"# q{l}_bond_sum: {fmt(report.bond_sum[l])}\n")
        handle.write("# columns: i " + " ".join(f"q{l}" for l in degrees) + "\n")
        for i in range(n):
            handle.write(
                "\t".join([str(i), *(fmt(report.per_sphere[l][i]) for l in degrees)]) + "\n"
            )
    return Path(path)


def write_currents(rnet: ResistorNetwork, result: BulkResistance, path: Path) -> Path:
    """Edge currents, one "i j current" line per conducting edge."""
    with _writer(path) as handle:
        handle.write(f"# resistance: {fmt(result.resistance)}\n")
        handle.write("# columns: i j current\n")
        if result.currents is not None:
            for (i, j), current in zip(rnet.edges.reshape(-1, 2), result.currents):
                handle.write(f"{int(i)}\t{int(j)}\t{fmt(current)}\n")
    return Path(path)


def write_potentials(result: BulkResistance, path: Path) -> Path:
    with _writer(path) as handle:
        handle.write("# columns: i potential\n")
        if result.field is not None:
            for i, value in enumerate(result.field.potentials):
                handle.write(f"{i}\t{fmt(value)}\n")
    return Path(path)


# ensembles


def write_ensemble(ensemble: ModelEnsemble, path: Path) -> Path:
    """Tab-separated matrix (seed + one column per statistic) and JSON sidecar."""
    with _writer(path) as handle:
        handle.write("\t".join(["seed", *ensemble.columns]) + "\n")
        for seed, row in zip(ensemble.seeds, ensemble.matrix):
            handle.write("\t".join([str(seed), *(fmt(v) for v in row)]) + "\n")
    write_provenance(
        path,
        {
            "kind": "ensemble",
            "spec": ensemble.spec.model_dump(mode="json") if ensemble.spec is not None else None,
            "master_seed": ensemble.master_seed,
            "descriptors": list(ensemble.descriptors),
            "seeds": list(ensemble.seeds),
            "failures": [f.model_dump() for f in ensemble.failures],
            "version": ensemble.version,
        },
    )
    return Path(path)


def read_ensemble(path: Path) -> ModelEnsemble:
    path = Path(path)
    lines = [line for line in _read_lines(path) if line.strip()]
    if not lines:
        raise PackingFormatError(f"{path}: empty ensemble file")
    head = lines[0].split("\t")
    if head[0] != "seed":
        raise PackingFormatError(f"{path}: first column must be 'seed'")
    columns = tuple(head[1:])
    seeds, rows = [], []
    for k, line in enumerate(lines[1:], start=1):
        fields = line.split("\t")
        if len(fields) != len(head):
            raise PackingFormatError(f"{path}:{k}: {len(fields)} fields, expected {len(head)}")
        seeds.append(int(fields[0]))
        rows.append(_floats(fields[1:], path, k))
    try:
        sidecar = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    except OSError:
        sidecar = {}
    except ValueError as exc:
        raise PackingFormatError(f"{sidecar_path(path)}: {exc}") from exc
    descriptors = sidecar.get("descriptors") or list(
        dict.fromkeys(descriptor_of(c) for c in columns)
    )
    try:
        return ModelEnsemble(
            spec=sidecar.get("spec"),
            master_seed=sidecar.get("master_seed"),
            descriptors=tuple(descriptors),
            columns=columns,
            matrix=np.array(rows, dtype=np.float64).reshape(len(rows), len(columns)),
            seeds=tuple(seeds),
            failures=tuple(EnsembleFailure(**f) for f in sidecar.get("failures", [])),
            version=sidecar.get("version", ""),
        )
    except ValidationError as exc:
        raise PackingFormatError(f"{path}: {exc}") from exc
