"""Moment relaxations and seesaw bounds for almost-qudit prepare-and-measure correlations."""

__version__ = "0.1.0"
