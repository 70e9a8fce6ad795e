"""Dialogue response ranking, success labelling and disentanglement on a
small numpy autograd core."""

__version__ = "0.1.0"
