"""Command-line entry point of the packing laboratory."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from src.core.config import RunConfig, load_run_config, settings
from src.core.exceptions import PackingLabError, ValidationFailure
from src.core.logging import configure_logging, get_logger
from src.core.rng import derive_seed
from src.generators import generate
from src.models.network import ContactRule, HardTolerance
from src.models.packing import BoundarySpec, Configuration
from src.services import packing_io
from src.services.analysis_service import PackingAnalysis
from src.services.contact_service import contact_service
from src.services.inference_service import inference_service
from src.services.order_service import order_service
from src.services.resistance_service import resistance_service
from src.services.spatial_stats_service import spatial_stats_service
from src.services.tessellation_service import tessellation_service

logger = get_logger(__name__)

EXIT_OK = 0


def _emit(summary: Dict[str, Any]) -> None:
    sys.stdout.write(packing_io.dumps(summary) + "\n")


def _provenance(args: argparse.Namespace, **extra: Any) -> Dict[str, Any]:
    options = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("handler", "log_level")
    }
    return {"command": args.command, "options": options, "version": settings.app_version, **extra}


def _rule(args: argparse.Namespace) -> Optional[ContactRule]:
    epsilon = getattr(args, "contact_epsilon", None)
    return HardTolerance(epsilon=epsilon) if epsilon is not None else None


def _out(args: argparse.Namespace, source: Path, suffix: str) -> Path:
    return Path(args.output_dir) / f"{Path(source).stem}.{suffix}"


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "ensemble_size": getattr(args, "ensemble_size", None),
        "workers": getattr(args, "workers", None),
        "output_dir": getattr(args, "output_dir", None),
        "descriptors": getattr(args, "descriptors", None),
    }
    if getattr(args, "config", None):
        return load_run_config(args.config, overrides)
    if not getattr(args, "spec", None):
        raise ValidationFailure("give a run configuration (--config) or a generator spec (--spec)")
    data: Dict[str, Any] = {"generator": json.loads(args.spec)}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.model_validate(data)


def parse_boundary(text: str, dimension: int) -> BoundarySpec:
    """'none', 'periodic:L1,L2[,L3]', 'hard:...' or 'open:lateral edges'."""
    kind, _, extents = text.partition(":")
    values = [float(v) for v in extents.split(",") if v]
    if kind == "none":
        return BoundarySpec.unbounded(dimension)
    if kind == "periodic":
        return BoundarySpec.periodic_box(*values)
    if kind == "hard":
        return BoundarySpec.hard_box(*values)
    if kind == "open":
        return BoundarySpec.open_with_base(*values)
    raise ValidationFailure(f"unknown boundary {text!r}")


# commands


def cmd_generate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    written: List[str] = []
    for k in range(args.count):
        seed = run.seed if args.count == 1 else derive_seed(run.seed, "realization", k)
        config = generate(run.generator, seed)
        path = Path(run.output_dir) / f"{run.generator.algorithm}-{seed}.txt"
        packing_io.write_configuration(config, path)
        packing_io.write_provenance(
            path, _provenance(args, spec=run.generator.model_dump(mode="json"), seed=seed)
        )
        written.append(str(path))
        _emit({"path": str(path), "n": config.n, "seed": seed, **_scalars(config)})
    logger.info("generate_finished", files=len(written))
    return EXIT_OK


def _scalars(config: Configuration) -> Dict[str, Any]:
    return {
        k: v
        for k, v in config.provenance.diagnostics.items()
        if isinstance(v, (int, float, str, bool))
    }


def cmd_stats(args: argparse.Namespace) -> int:
    config = packing_io.read_configuration(args.packing)
    analysis = PackingAnalysis(config, _rule(args))
    pattern = analysis.pattern
    g, rdf = spatial_stats_service.pair_correlation(
        pattern, shell_width=args.shell_width, r_max=args.r_max
    )
    r_grid = np.linspace(0.0, args.r_max, int(round(args.r_max / 0.05)) + 1)[1:]
    k = spatial_stats_service.k_function(pattern, r_grid, correction=args.correction)
    s = spatial_stats_service.spherical_contact(config, np.linspace(0.0, 1.0, 51), analysis.window)
    fraction = spatial_stats_service.volume_fraction(config, analysis.window)
    outputs = {
        "pair_correlation": packing_io.write_curve(g, _out(args, args.packing, "g.tsv")),
        "radial_distribution": packing_io.write_curve(rdf, _out(args, args.packing, "rdf.tsv")),
        "k_function": packing_io.write_curve(k, _out(args, args.packing, "k.tsv")),
        "spherical_contact": packing_io.write_curve(s, _out(args, args.packing, "s.tsv")),
    }
    for path in outputs.values():
        packing_io.write_provenance(path, _provenance(args))
    _emit(
        {
            "volume_fraction": fraction.value,
            "standard_error": fraction.standard_error,
            "points": pattern.n,
            "files": {k: str(v) for k, v in outputs.items()},
        }
    )
    return EXIT_OK


def cmd_tessellate(args: argparse.Namespace) -> int:
    config = packing_io.read_configuration(args.packing)
    analysis = PackingAnalysis(config, _rule(args))
    stats = tessellation_service.cell_statistics(
        analysis.tess, analysis.partition.interior, field=args.field, bins=args.bins
    )
    path = packing_io.write_cell_records(stats.records, _out(args, args.packing, "cells.tsv"))
    packing_io.write_provenance(path, _provenance(args))
    _emit(
        {
            "cells": len(stats.records),
            "summary": {k: v.model_dump() for k, v in stats.summary.items()},
            "gamma_fit": stats.gamma_fit.model_dump(),
            "histogram": stats.histogram.model_dump(),
            "file": str(path),
        }
    )
    return EXIT_OK


def cmd_contacts(args: argparse.Namespace) -> int:
    config = packing_io.read_configuration(args.packing)
    analysis = PackingAnalysis(config, _rule(args))
    net, partition = analysis.net, analysis.partition
    report = contact_service.coordination_histogram(net, partition)
    gravity = config.boundary.gravity_axis is not None
    jam = contact_service.jam_summary(config, net, partition, gravity=gravity)
    edges = packing_io.write_edges(net, _out(args, args.packing, "edges.tsv"))
    walls = packing_io.write_wall_contacts(net, _out(args, args.packing, "walls.tsv"))
    for path in (edges, walls):
        packing_io.write_provenance(path, _provenance(args))
    _emit(
        {
            "coordination": report.model_dump(),
            "jammed_fraction": jam.jammed_fraction,
            "rattler_fraction": jam.rattler_fraction,
            "components": contact_service.connected_components(net).count,
            "files": [str(edges), str(walls)],
        }
    )
    return EXIT_OK


def cmd_order(args: argparse.Namespace) -> int:
    config = packing_io.read_configuration(args.packing)
    analysis = PackingAnalysis(config, _rule(args))
    if config.dimension == 2:
        defects = order_service.planar_defect_count(analysis.tri, analysis.partition)
        _emit(defects.model_dump())
        return EXIT_OK
    bonds = order_service.bond_set(config, analysis.net, analysis.tri)
    report = order_service.bond_orientational(
        config, bonds, degrees=(4, 6), spheres=analysis.partition.interior
    )
    path = packing_io.write_order(report, _out(args, args.packing, "order.tsv"))
    packing_io.write_provenance(path, _provenance(args))
    _emit(
        {
            "local_mean": report.local_mean,
            "bond_sum": report.bond_sum,
            "scored": len(report.scored),
            "excluded": len(report.excluded),
            "file": str(path),
        }
    )
    return EXIT_OK


def cmd_resist(args: argparse.Namespace) -> int:
    config = packing_io.read_configuration(args.packing)
    analysis = PackingAnalysis(config, _rule(args))
    electrodes = resistance_service.auto_electrodes(config, args.axis)
    rnet = resistance_service.build_resistor_network(analysis.net, electrodes, config=config)
    result = resistance_service.solve_bulk_resistance(rnet)
    currents = packing_io.write_currents(rnet, result, _out(args, args.packing, "currents.tsv"))
    potentials = packing_io.write_potentials(result, _out(args, args.packing, "potentials.tsv"))
    summary: Dict[str, Any] = {
        "resistance": result.resistance,
        "connected": result.connected,
        "solver": result.solver,
        "axis": electrodes.axis,
        "files": [str(currents), str(potentials)],
    }
    if args.expansions:
        curve = resistance_service.conductance_vs_expansion(config, args.expansions, electrodes)
        summary["conductance_curve"] = {
            "expansions": curve.expansions.tolist(),
            "conductances": curve.conductances.tolist(),
        }
    for path in (currents, potentials):
        packing_io.write_provenance(path, _provenance(args))
    _emit(summary)
    return EXIT_OK


def _ensemble(source: Path, args: argparse.Namespace, label: str):
    """A stored ensemble (.tsv) or a fresh one from a run configuration (.toml)."""
    if Path(source).suffix == ".toml":
        run = load_run_config(source, {"workers": args.workers})
        ensemble = inference_service.run_ensemble(
            run.generator,
            run.ensemble_size,
            run.seed,
            run.descriptors,
            run.contact_rule,
            run.workers,
        )
        path = Path(args.output_dir) / f"{Path(source).stem}.{label}.ensemble.tsv"
        packing_io.write_ensemble(ensemble, path)
        return ensemble
    return packing_io.read_ensemble(source)


def cmd_assess(args: argparse.Namespace) -> int:
    a = _ensemble(args.first, args, "a")
    b = _ensemble(args.second, args, "b")
    names = args.descriptors or [d for d in a.descriptors if d in b.descriptors]
    energy = inference_service.energy_distance_test(
        a, b, args.permutations, args.seed, descriptors=names
    )
    battery = inference_service.ks_battery(a, b, args.alpha, descriptors=names)
    summary = {
        "energy": energy.model_dump(),
        "ks": [d.model_dump() for d in battery.decisions],
        "ks_rejections": list(battery.rejections),
    }
    path = Path(args.output_dir) / "assessment.json"
    packing_io.write_json(path, summary)
    packing_io.write_provenance(path, _provenance(args))
    _emit(summary)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    run = load_run_config(args.config, {"workers": args.workers, "seed": args.seed})
    if run.fit is None:
        raise ValidationFailure(f"{args.config} has no [fit] block")
    data = packing_io.read_ensemble(args.data)
    fit = inference_service.min_contrast_fit(
        run.generator,
        run.fit.parameter,
        run.fit.grid,
        data,
        descriptor=run.fit.descriptor,
        replications=run.fit.replications,
        seed=run.seed,
        held_out=run.fit.held_out,
        rule=run.contact_rule,
        n_permutations=args.permutations,
    )
    summary = {
        "parameter": fit.parameter,
        "grid": list(fit.grid),
        "contrasts": list(fit.contrasts),
        "best": fit.best,
        "identifiable": fit.identifiable,
        "held_out": fit.held_out.model_dump() if fit.held_out is not None else None,
        "held_out_note": fit.held_out_note,
    }
    path = Path(run.output_dir) / f"{Path(args.config).stem}.fit.json"
    packing_io.write_json(path, summary)
    packing_io.write_provenance(path, _provenance(args, spec=run.generator.model_dump(mode="json")))
    _emit(summary)
    return EXIT_OK


def cmd_import(args: argparse.Namespace) -> int:
    boundary = parse_boundary(args.boundary, args.dimension)
    config = packing_io.read_centers(args.centers, args.dimension, args.radius, boundary)
    path = _out(args, args.centers, "txt")
    packing_io.write_configuration(config, path)
    packing_io.write_provenance(path, _provenance(args))
    _emit({"path": str(path), "n": config.n, "dimension": config.dimension})
    return EXIT_OK


# parser


def _analysis_parser(sub, name: str, handler, help_text: str) -> argparse.ArgumentParser:
    parser = sub.add_parser(name, help=help_text)
    parser.add_argument("packing", type=Path)
    parser.add_argument("--output-dir", type=Path, default=settings.output_dir)
    parser.add_argument("--contact-epsilon", type=float, default=None)
    parser.set_defaults(handler=handler)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="packlab", description="Disordered packing laboratory")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate packings")
    gen.add_argument("--config", type=Path)
    gen.add_argument("--spec", help="generator spec as JSON")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--output-dir", type=Path)
    gen.set_defaults(handler=cmd_generate)

    stats = _analysis_parser(sub, "stats", cmd_stats, "spatial statistics of a packing")
    stats.add_argument("--shell-width", type=float, default=settings.default_shell_width)
    stats.add_argument("--r-max", type=float, default=2.5)
    stats.add_argument("--correction", choices=("minus", "translation"), default="translation")

    tess = _analysis_parser(sub, "tessellate", cmd_tessellate, "Voronoi cell statistics")
    tess.add_argument("--field", default="volume")
    tess.add_argument("--bins", type=int, default=20)

    _analysis_parser(sub, "contacts", cmd_contacts, "contact network and jamming")
    _analysis_parser(sub, "order", cmd_order, "bond-orientational order or planar defects")

    resist = _analysis_parser(sub, "resist", cmd_resist, "bulk resistance of the contact network")
    resist.add_argument("--axis", type=int)
    resist.add_argument("--expansions", type=float, nargs="*")

    assess = sub.add_parser("assess", help="compare two ensembles")
    assess.add_argument("first", type=Path)
    assess.add_argument("second", type=Path)
    assess.add_argument("--descriptors", nargs="*")
    assess.add_argument("--permutations", type=int, default=settings.n_permutations)
    assess.add_argument("--alpha", type=float, default=0.05)
    assess.add_argument("--seed", type=int, default=0)
    assess.add_argument("--workers", type=int)
    assess.add_argument("--output-dir", type=Path, default=settings.output_dir)
    assess.set_defaults(handler=cmd_assess)

    fit = sub.add_parser("fit", help="minimum-contrast parameter fit")
    fit.add_argument("--config", type=Path, required=True)
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--workers", type=int)
    fit.add_argument("--permutations", type=int, default=settings.n_permutations)
    fit.set_defaults(handler=cmd_fit)

    imp = sub.add_parser("import", help="import a bare centre list")
    imp.add_argument("centers", type=Path)
    imp.add_argument("--dimension", type=int, default=3)
    imp.add_argument("--radius", type=float, default=0.5)
    imp.add_argument("--boundary", default="none")
    imp.add_argument("--output-dir", type=Path, default=settings.output_dir)
    imp.set_defaults(handler=cmd_import)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except PackingLabError as exc:
        logger.error(
            "command_failed", command=args.command, error=type(exc).__name__, message=str(exc)
        )
        return exc.exit_code
    except ValidationError as exc:
        logger.error(
            "invalid_input", command=args.command, errors=exc.error_count(), message=str(exc)
        )
        return ValidationFailure.exit_code
    except ValueError as exc:
        logger.error("invalid_argument", command=args.command, message=str(exc))
        return ValidationFailure.exit_code


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
