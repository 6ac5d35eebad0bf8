"""Slice-based latent diffusion for joint volume + tumor-mask synthesis at desk scale."""

__version__ = "0.1.0"
