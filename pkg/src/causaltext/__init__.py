"""Causal effect estimation from text corpora.

Learns low-dimensional document embeddings with a supervised amortized topic
model, fits propensity and conditional-outcome heads on them, and plugs the
fitted nuisances into downstream effect estimators. Ships a semi-synthetic
benchmark protocol with known ground truth for validating estimators.
"""

__version__ = "0.1.0"
