"""Quantum filtering as classical Kalman filtering with correlated noise.

Subpackages and modules:

- ``statespace``: transfer functions, poles, zeros, structural tests
- ``riccati``: Hamiltonian matrices, stabilizing Riccati solutions, Riccati ODEs
- ``filtering``: correlated-noise Kalman filter, SDE engine, particle oracle
- ``quantum_linear``: canonical two-phase systems, duality, measured cavities
- ``spin``: spin algebra, spin Wigner functions, large-spin identities
- ``spin_control``: large-spin moment filter and Lyapunov feedback
"""

from .errors import QuantumKalmanError

__all__ = ["QuantumKalmanError"]
