"""Distributed multitask target tracking over ad hoc sensor networks.

The package simulates networks of sensor nodes that track ballistic targets
with adapt-then-combine diffusion Kalman filters. Nodes share measurements
and intermediate estimates with their neighbors, weight each other by how
similar their data streams look, and thereby split an initially mixed
network into per-target clusters without supervision.
"""

from .errors import ConfigError, NumericError

__all__ = ["ConfigError", "NumericError"]

__version__ = "0.1.0"
