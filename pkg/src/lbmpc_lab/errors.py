"""Exception types shared across the package."""

from __future__ import annotations


class ContractError(ValueError):
    """An operation was called with arguments outside its contract."""


class EmptySetError(ContractError):
    """A set that must be nonempty turned out to be empty."""


class EmptySafeSetError(EmptySetError):
    """The safe input set at a state is empty.

    This signals that a scenario violates the feasibility assumptions of the
    invariant-set construction.
    """


class UnsupportedOperationError(NotImplementedError):
    """Raised for set operations outside the supported dimensions/shapes."""


class StabilityError(ValueError):
    """The closed-loop matrix A + BK is not Schur stable."""


class NonConvergenceError(RuntimeError):
    """An iteration hit its cap before terminating.

    The best available result is attached as ``result``.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class ContainmentError(ContractError):
    """The residual g(x, u, theta_true) left the declared disturbance set W."""


class PolicyFailure(RuntimeError):
    """The closed loop reached a state with no safe or feasible input."""

    def __init__(self, message: str, state=None, t: int | None = None):
        super().__init__(message)
        self.state = state
        self.t = t
