"""Physics-informed super-resolution GAN (PIESRGAN) subgrid modeling toolkit."""

__version__ = "0.1.0"
