"""CAD model retrieval and 9-DoF alignment for RGB-D indoor scans."""

__version__ = "0.1.0"
