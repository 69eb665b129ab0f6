"""Influence matrices of chaotic quantum baths.

Exact replica transfer matrices for random-unitary toy baths, tensor-network
influence matrices for the kicked Ising chain, and the analyses built on them
(temporal entanglement, Markovian decompositions, correlators, operator
spreading).
"""

__version__ = "0.1.0"
