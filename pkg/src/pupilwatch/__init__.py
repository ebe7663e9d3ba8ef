"""Cognitive-event detection from pupil diameter and gaze, with a synthetic cohort generator."""

from .errors import FormatError
from .signal_model import SAMPLE_RATE_HZ, Recording, TaskKind

__version__ = "0.1.0"

__all__ = ["FormatError", "Recording", "SAMPLE_RATE_HZ", "TaskKind", "__version__"]
