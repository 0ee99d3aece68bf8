"""Clothed-body generative model: LBS body runtime, graph-conv VAE-GAN over displacement fields."""

__version__ = "0.1.0"
