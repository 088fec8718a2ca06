"""neurolight: an FDFD photonic simulation workbench with a cross-shaped
Fourier neural operator surrogate for multi-mode interference devices."""

__version__ = "0.1.0"
