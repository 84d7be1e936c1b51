"""Thermal-to-visible face verification toolkit.

Keypoint alignment, multi-crop keypoint fusion, visible/thermal frame
synchronisation, identity and pixel objectives, verification metrics and a
synthetic paired-spectrum dataset generator.
"""
from . import dataset, geometry, landmarks, objectives, sync, verification
from .errors import ThermVisError
from .geometry import (
    DEFAULT_TEMPLATE,
    CanonicalTemplate,
    Image,
    KeypointSet,
    Schema,
    SimilarityTransform,
    align_face,
    solve_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "dataset", "geometry", "landmarks", "objectives", "sync", "verification",
    "ThermVisError", "DEFAULT_TEMPLATE", "CanonicalTemplate", "Image", "KeypointSet",
    "Schema", "SimilarityTransform", "align_face", "solve_similarity",
]
