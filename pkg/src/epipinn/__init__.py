"""Physics-informed neural forecasting of weekly epidemic counts."""

__version__ = "0.1.0"
