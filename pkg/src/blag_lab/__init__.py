"""Constrained combinatorial bandits on action-set graphs, with a
semi-informed network diffusion simulator."""

__version__ = "0.1.0"
