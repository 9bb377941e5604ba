"""Physical challenge-response authentication for active sensors: simulation toolkit."""

__version__ = "0.1.0"
