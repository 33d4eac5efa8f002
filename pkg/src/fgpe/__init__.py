"""Factor-graph pursuit-evasion: joint evader estimation and pursuer planning."""

from fgpe.geometry import Point2, Pose2, RangeBearing, DegenerateGeometry

__all__ = ["Point2", "Pose2", "RangeBearing", "DegenerateGeometry"]
__version__ = "0.1.0"
