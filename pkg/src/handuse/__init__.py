"""Hand-object interaction detection and hand-use metrics for egocentric frame sequences."""

from .core import (BoundingBox, ConfigError, ConfigValidationError, DataError, FrameImage, HandObservation,
                   HanduseError, Laterality, MissingInputError, ModelError, PipelineConfig, load_config)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "ConfigError", "ConfigValidationError", "DataError", "FrameImage", "HandObservation",
    "HanduseError", "Laterality", "MissingInputError", "ModelError", "PipelineConfig", "load_config",
]
