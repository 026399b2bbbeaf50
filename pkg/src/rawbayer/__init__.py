"""Synthetic RAW Bayer data: mosaicing, reversible ISP pipelines, GAN-theory checks and image metrics."""

__version__ = "0.1.0"
