"""Critical points down-sampling for point clouds, with a small CP-Net classifier."""

__version__ = "0.1.0"
