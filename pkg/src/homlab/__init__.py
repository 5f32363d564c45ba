"""homlab: a lattice laboratory for quantitative stochastic homogenization.

Builds correctors, flux correctors, homogenized tensors, Dirichlet boundary
correctors, quenched/annealed Green functions and the mixed-derivative
two-scale expansion on random conductance lattices, and verifies the
expected decay and scaling laws by Monte Carlo rate fitting.
"""

__version__ = "0.1.0"
