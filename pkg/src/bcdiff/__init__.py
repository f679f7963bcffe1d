"""Boundary-conditional diffusion for discrete data.

Estimates where a deterministic forward trajectory leaves the region of
continuous space that rounds to a discrete datum, restarts the trajectory
at that boundary, and trains/samples an x0-predicting denoiser on the
rescaled process.
"""

from bcdiff.boundary import BoundaryEstimate, estimate_boundary
from bcdiff.discrete_space import EmbeddingTable, round_to_discrete
from bcdiff.schedules import Schedule, make_schedule

__all__ = [
    "BoundaryEstimate",
    "EmbeddingTable",
    "Schedule",
    "estimate_boundary",
    "make_schedule",
    "round_to_discrete",
]

__version__ = "0.1.0"
