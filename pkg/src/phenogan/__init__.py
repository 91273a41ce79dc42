"""Conditional GAN for synthesizing phenology-camera imagery at a target canopy greenness."""
__version__ = "0.1.0"
