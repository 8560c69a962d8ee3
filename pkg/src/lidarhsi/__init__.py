"""Land-cover classification by fusing hyperspectral and LiDAR rasters."""

__version__ = "0.1.0"
