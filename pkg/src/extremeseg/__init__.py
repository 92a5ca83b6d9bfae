"""Weakly supervised 3D lesion segmentation from six extreme points."""
from .volume import BoundingBox, ExtremePoints, Volume3D

__all__ = ["BoundingBox", "ExtremePoints", "Volume3D"]
__version__ = "0.1.0"
