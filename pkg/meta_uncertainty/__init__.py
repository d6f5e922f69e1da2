"""Instance-level uncertainty estimation from meta-heuristics of classification hardness."""

__version__ = "0.1.0"
