"""Rating-migration calibration under historical and risk-neutral measures,
with rating-triggered collateral in bilateral valuation adjustments."""

__version__ = "0.1.0"
