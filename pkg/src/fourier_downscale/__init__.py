"""Temporal downscaling of electrical load with a Fourier-enhanced recurrent
network, trained with hand-written reverse-mode gradients."""

__version__ = "0.1.0"
