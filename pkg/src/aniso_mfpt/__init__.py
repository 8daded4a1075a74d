"""Mean first passage times of anisotropic velocity-jump processes."""

__version__ = "0.1.0"
