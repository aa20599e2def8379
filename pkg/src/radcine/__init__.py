"""Free-breathing golden-angle radial cine reconstruction toolkit."""

__version__ = "0.1.0"
