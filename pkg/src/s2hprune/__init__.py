"""Differentiable soft-to-hard structural pruning at desk scale."""
