"""Data-driven controller synthesis toolkit.

Learns unknown stochastic dynamics from state-action-state data with
Gaussian-process regression, compiles a certified interval-MDP abstraction
over a grid partition, synthesizes a robust strategy for a finite-trace
temporal-logic specification, and refines both strategy and abstraction
online with local GPs.
"""

from gpimdp._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
