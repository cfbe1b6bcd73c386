"""
Core numerics, the autoencoder, its losses and the trainer.

This package contains fundamental components that other modules depend on.
"""
