"""Numerical laboratory for the parabolic complex Monge-Ampere flow with logarithmic poles."""
from .core import FlowParams, LelongAtom, continuity_bound_C, dotu_envelopes, epsilon_A, k_A

__all__ = ["FlowParams", "LelongAtom", "continuity_bound_C", "dotu_envelopes", "epsilon_A", "k_A"]
