"""Two-stage trend detection and backtesting on daily OHLCV bars."""

from . import cli, evaluation, features, gbdt, labels, market_data, pipeline, synth
from .errors import TrendlabError

__version__ = "0.1.0"

__all__ = [
    "TrendlabError",
    "__version__",
    "cli",
    "evaluation",
    "features",
    "gbdt",
    "labels",
    "market_data",
    "pipeline",
    "synth",
]
