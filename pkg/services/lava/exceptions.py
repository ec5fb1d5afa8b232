#!/usr/bin/env python


class LavaError(Exception):
    """Base class for errors raised by the lava toolkit."""


class InvalidInputError(LavaError, ValueError):
    """Rejected input: penalties, shapes, design columns, CSV cells or configs."""


class ConvergenceError(LavaError, RuntimeError):
    """A caller required a converged fit and the solver did not deliver one."""

    def __init__(self, message: str, kkt_residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.kkt_residual = kkt_residual
        self.iterations = iterations


class NumericalError(LavaError, ArithmeticError):
    """Numerically ill-posed request, e.g. unpenalized ridge on a rank-deficient design."""
