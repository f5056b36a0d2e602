"""Allow ``python -m etel_divergence``."""

from etel_divergence.cli import app

app()
