"""Kinetically constrained lattice gases: exact spectra, variational bounds and KMC."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
