"""Capacity bounds, random codebooks and simulations for classical-quantum relay channels."""

from . import entropic, netgen, optimize, qcore, relay, sim
from ._kernels import USE_NUMBA

__all__ = ["entropic", "netgen", "optimize", "qcore", "relay", "sim", "USE_NUMBA"]
__version__ = "0.1.0"
