"""Feature extraction from real images into the UVSE binary format."""

from .encoder import CHANNEL_MEAN, CHANNEL_STD, GRID, MODEL_DEPTHS, build_encoder, preprocess
from .extract import ExtractionError, ExtractionResult, extract, main
from .manifest import ExtractionManifest, ResizePolicy, manifest_from_directory

__version__ = "0.1.0"

__all__ = [
    "CHANNEL_MEAN",
    "CHANNEL_STD",
    "GRID",
    "MODEL_DEPTHS",
    "ExtractionError",
    "ExtractionManifest",
    "ExtractionResult",
    "ResizePolicy",
    "build_encoder",
    "extract",
    "main",
    "manifest_from_directory",
    "preprocess",
]
