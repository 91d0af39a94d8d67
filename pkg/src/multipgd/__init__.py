"""Multi-stage PGD with alternating surrogate losses."""

__version__ = "0.1.0"
