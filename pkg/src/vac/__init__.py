"""Variational actor-critic for finite discounted MDPs."""
__version__ = "0.1.0"
