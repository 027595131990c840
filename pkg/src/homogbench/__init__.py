"""Numerical workbench for periodic homogenization of singularly perturbed fourth-order operators."""

from .errors import *  # noqa: F401,F403
from .kernels import BACKEND

__version__ = "0.1.0"
