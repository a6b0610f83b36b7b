"""Self-hostable collaborative reading platform server."""

__version__ = "0.1.0"
