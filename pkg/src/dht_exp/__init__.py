"""Error-exponent bounds for distributed hypothesis testing."""
__version__ = "0.1.0"
