"""
SAEmnesia - supervised TopK sparse autoencoders for concept unlearning

Binds each labeled concept to a single latent during training and erases a
concept at inference by steering that one latent.
"""

__version__ = "0.1.0"
__author__ = "SAEmnesia Developers"
