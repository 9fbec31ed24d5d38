"""Vibroacoustic breach detection for pedicle drilling.

Synchronized multi-sensor recordings are windowed into mel spectrograms,
labelled automatically from optical tracking and a CT mesh, and classified
by a squeeze-and-excitation residual network.
"""

__version__ = "0.1.0"
