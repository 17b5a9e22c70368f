"""voxnav: occupancy prediction for navigation under occlusion, desk scale."""

__version__ = "0.1.0"

from .voxel import OccupancyGrid, TrinaryGrid, Region, UNKNOWN  # noqa: F401
