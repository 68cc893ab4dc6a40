"""Numerical laboratory for the renormalization-group construction of the
vector-valued KPZ equation of stochastic hydrodynamics.

Subpackages mirror the pipeline: coupling algebra, deterministic kernels,
noise sampling, renormalization constants, the pseudospectral solver, the
discrete RG tower, and the Monte-Carlo verification batteries.
"""

__version__ = "0.1.0"
