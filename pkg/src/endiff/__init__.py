"""Enhanced dissipation of passive scalars: stochastic trajectories and mode solvers."""

import os

import numba

__version__ = "0.1.0"

# prefer OpenMP so numba does not probe (and warn about) an old TBB
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]
