"""Cine cardiac MRI reconstruction with a convolutional recurrent network and a refinement module."""

__version__ = "0.1.0"
