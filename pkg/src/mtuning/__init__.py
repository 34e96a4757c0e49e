"""Open-set recognition by prompt tuning with open words and class-group prompts."""

__version__ = "0.1.0"

from .core import ConfigError, DataError, MTuningError, NumericError, Rng  # noqa: E402

__all__ = ["ConfigError", "DataError", "MTuningError", "NumericError", "Rng", "__version__"]
