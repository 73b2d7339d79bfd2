"""Space-time log-risk forecasting from regional count data."""

__version__ = "0.1.0"
