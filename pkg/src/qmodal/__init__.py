"""Multi-agent epistemic reasoning about quantum measurement scenarios."""

__version__ = "0.1.0"
