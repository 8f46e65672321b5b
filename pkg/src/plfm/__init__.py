"""Partially latent flow matching for all-atom protein generation at desk scale."""

__version__ = "0.1.0"
