"""Multi-style trajectory forecasting with per-channel endpoint proposals."""

__version__ = "0.1.0"

from .model import ModelConfig, MultiStyleForecaster, prepare_samples  # noqa: F401
