"""Deterministic multi-agent eco-driving simulation suite for signalized
intersections: procedural scenario generation, a microscopic car-following
kernel, an emission surrogate, a Dec-POMDP environment, Bayesian driver
calibration, and evaluation protocols against a human-driving baseline."""

__version__ = "0.1.0"
