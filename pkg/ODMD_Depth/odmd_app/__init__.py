"""Object depth from camera motion and bounding boxes."""

__version__ = "1.0.0"
