"""Data models for the packing laboratory."""

from .generator import Algorithm, GeneratorSpec
from .inference import ContrastFit, ModelEnsemble, StatisticDescriptor, TestResult
from .network import ContactNetwork, GaussianRule, HardTolerance, SpherePartition
from .order import BondSet, OrderReport, PlanarDefects
from .packing import BoundaryKind, BoundarySpec, Configuration, Provenance, Sphere
from .resistance import BulkResistance, ElectrodeSpec, ResistorNetwork
from .statistics import PointPattern, RadialFunction, Window
from .tessellation import Tessellation, Triangulation

__all__ = [
    # Packings
    "BoundaryKind",
    "BoundarySpec",
    "Configuration",
    "Provenance",
    "Sphere",
    # Generators
    "Algorithm",
    "GeneratorSpec",
    # Geometry and contacts
    "Triangulation",
    "Tessellation",
    "ContactNetwork",
    "HardTolerance",
    "GaussianRule",
    "SpherePartition",
    # Statistics
    "Window",
    "PointPattern",
    "RadialFunction",
    "BondSet",
    "OrderReport",
    "PlanarDefects",
    "ElectrodeSpec",
    "ResistorNetwork",
    "BulkResistance",
    # Inference
    "StatisticDescriptor",
    "ModelEnsemble",
    "TestResult",
    "ContrastFit",
]
