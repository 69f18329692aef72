"""Night-image layer decomposition and light-effects suppression."""

__version__ = "0.1.0"
