"""Coarse-to-fine MPC motion planning for a closed-chain two-arm system."""

__version__ = "1.0.0"
