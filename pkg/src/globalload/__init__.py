"""Global and cluster-localized N-BEATS forecasting of half-hourly electricity load."""

__version__ = "0.1.0"
