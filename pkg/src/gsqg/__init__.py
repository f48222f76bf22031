"""Slow traveling vortex pairs for the generalized SQG equation.

Numerical lab: constrained energy maximization for the half-plane pair and
its whole-plane limit, identity/asymptotics verification, rearrangement
experiments, and transport-based orbital-stability probes.
"""

__version__ = "0.1.0"
