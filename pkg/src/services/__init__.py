"""Analysis services."""

from .contact_service import ContactService, contact_service
from .inference_service import InferenceService, inference_service
from .order_service import OrderService, order_service
from .resistance_service import ResistanceService, resistance_service
from .spatial_stats_service import SpatialStatsService, spatial_stats_service
from .tessellation_service import TessellationService, tessellation_service

__all__ = [
    "ContactService",
    "InferenceService",
    "OrderService",
    "ResistanceService",
    "SpatialStatsService",
    "TessellationService",
    "contact_service",
    "inference_service",
    "order_service",
    "resistance_service",
    "spatial_stats_service",
    "tessellation_service",
]
