"""Occlusion-aware sparse point tracking with adaptive multi-frame back-checks."""

__version__ = "0.1.0"
