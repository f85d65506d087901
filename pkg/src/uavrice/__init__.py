"""UAV data-harvesting planner and link simulator under angle-dependent Rician fading.

The package plans 3D trajectories and per-slot sensor scheduling that maximize
the minimum outage-constrained collection rate, then scores plans by exact
outage quantiles and Monte-Carlo link simulation.
"""

DEFAULT_SEED = 20240613

__version__ = "0.1.0"
