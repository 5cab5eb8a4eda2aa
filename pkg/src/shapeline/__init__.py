"""Route-length shape statistics for networks on Poisson point clouds."""

from .errors import (DegenerateGeometryError, DisconnectedGraphError, EmptyDomainError, InvalidArgumentError,
                     PropertyViolationError, ShapelineError)
from .models import ModelSpec
from .ppgen import Point, PointSet, Region, Window, nearest_point, points_in, sample_poisson

__version__ = "0.1.0"

__all__ = [
    "DegenerateGeometryError", "DisconnectedGraphError", "EmptyDomainError", "InvalidArgumentError",
    "ModelSpec", "Point", "PointSet", "PropertyViolationError", "Region", "ShapelineError", "Window",
    "nearest_point", "points_in", "sample_poisson",
]
