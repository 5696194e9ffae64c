"""Per-video layered counterfactual video decomposition toolkit."""

__version__ = "0.1.0"
