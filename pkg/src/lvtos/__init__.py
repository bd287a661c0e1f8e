"""Late mechanical activation mapping of the left ventricle."""

__version__ = "0.1.0"
