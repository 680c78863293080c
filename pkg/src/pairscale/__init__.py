"""Latent attribute scaling from LLM-elicited pairwise comparisons."""

__version__ = "0.1.0"
