"""Lattice toolkit for graded boundary structures of string worldsheet models.

Exact Grassmann arithmetic, spectral/SBP lattices, and the chain of
boundary-structure computations for Nambu-Goto and Polyakov strings:
constraint algebras, presymplectic reduction, ghost extensions, master
equations, and the free/non-free solution-module analysis.
"""

__version__ = "0.1.0"
