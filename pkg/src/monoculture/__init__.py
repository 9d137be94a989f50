"""Excess-agreement (monoculture) measurement relative to explicit IRT null models."""

__version__ = "0.1.0"
