"""Uniformization engine for semi-Markov jump processes and multi-state life insurance valuation."""
from ._backend import DEFAULT as KERNEL_BACKEND
from .grid import PoissonGrid, deterministic_grid, sample_grid
from .intensity import IntensityFamily, augment, constant_family, expression_family, shift, validate
from .pi_engine import PiTable, StepMatrices, build_pi_table, build_step_matrices, tv_distance

__version__ = "0.1.0"
