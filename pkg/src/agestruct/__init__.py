"""Simulation and verification toolkit for age-structured branching populations.

Subpackages by concern: ``measures`` (atomic/grid measures and test
functions), ``rates`` (demographic rate families and offspring laws),
``branching`` (exact event-driven simulation with martingale bookkeeping),
``mvf`` (the deterministic transport-renewal limit), ``spde`` (the Gaussian
fluctuation field around the limit), ``harness`` (experiment orchestration)
and ``acceptance`` (the quantitative verification suite).
"""

__version__ = "0.1.0"

from . import measures, rates  # noqa: F401
