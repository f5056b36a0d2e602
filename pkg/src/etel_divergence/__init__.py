"""etel-divergence: EL / ET / ETEL estimation and empirical phi-divergence tests."""

__version__ = "0.1.0"

BUILTIN_MODEL: str = "mean-variance-normal"
