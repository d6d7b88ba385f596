"""Exception hierarchy shared by every module of the package."""


class QuantumKalmanError(Exception):
    """Base class for all errors raised by quantum_kalman."""


class DimensionMismatch(QuantumKalmanError, ValueError):
    pass


class SingularResolvent(QuantumKalmanError, ArithmeticError):
    """``sI - A`` is numerically singular at the requested sample point."""


class SingularTransform(QuantumKalmanError, ValueError):
    pass


class OddDimension(QuantumKalmanError, ValueError):
    pass


class NoStabilizingSolution(QuantumKalmanError, ArithmeticError):
    pass


class SubspaceDimensionMismatch(QuantumKalmanError, ArithmeticError):
    pass


class IndefiniteBlock(QuantumKalmanError, ValueError):
    pass


class StepTooLarge(QuantumKalmanError, ArithmeticError):
    """Integration lost symmetry or positive semidefiniteness."""


class NonFinite(QuantumKalmanError, ArithmeticError):
    pass


class Degeneracy(QuantumKalmanError, ArithmeticError):
    """Particle weights collapsed below the usable effective sample size."""


class ZeroCoupling(QuantumKalmanError, ValueError):
    pass


class DomainError(QuantumKalmanError, ValueError):
    pass


class RangeError(QuantumKalmanError, ValueError):
    pass


class GridTooCoarse(QuantumKalmanError, ValueError):
    pass


class EpsilonTooLarge(QuantumKalmanError, ValueError):
    pass


class ConfigError(QuantumKalmanError, ValueError):
    pass
