"""flowdiff: age-specific net migration by flow-difference methods."""

__version__ = "0.1.0"
