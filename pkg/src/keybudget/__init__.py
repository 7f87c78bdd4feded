"""Secret-key budget dynamics, ruin and resilience analysis for one-time-pad links."""

from .model import AlertLaw, SystemParams, db_to_linear, linear_to_db

__version__ = "0.1.0"

__all__ = ["AlertLaw", "SystemParams", "db_to_linear", "linear_to_db", "__version__"]
