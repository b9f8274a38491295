"""LiDAR scan-image feature toolkit."""

__version__ = "0.1.0"
