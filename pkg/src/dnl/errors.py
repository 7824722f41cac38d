"""Exception hierarchy shared by all modules."""


class DNLError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(DNLError, ValueError):
    """Shapes, lengths or values violate an operation's preconditions."""


class DegenerateNormalizerError(DNLError, ArithmeticError):
    """A softmax-type normalizer vanished or became non-finite."""


class NumericalOverflowError(DNLError, ArithmeticError):
    """A state became non-finite during a forward pass or solve."""

    def __init__(self, message, *, layer=None, time=None):
        super().__init__(message)
        self.layer = layer
        self.time = time


class SolverStallError(DNLError, ArithmeticError):
    """The per-step fixed point of the implicit quadrature did not converge."""

    def __init__(self, message, *, time):
        super().__init__(message)
        self.time = time


class TrainingDivergedError(DNLError, ArithmeticError):
    """Objective exceeded the divergence threshold during descent."""

    def __init__(self, message, *, epoch):
        super().__init__(message)
        self.epoch = epoch
