"""Exception and warning classes shared across the package."""


class LinvmapError(Exception):
    """Base class for all errors raised by linvmap."""

    exit_code = 1


class ContractError(LinvmapError, ValueError):
    """An argument violated a documented precondition (shape, range, ...)."""

    exit_code = 2


class NumericalFailure(LinvmapError, ArithmeticError):
    """A dense kernel failed to converge."""

    exit_code = 4


class SingularEmbeddingError(NumericalFailure):
    """An embedding (or coefficient matrix) lacks full column rank where the
    closed-form solve and its derivative require it."""


class TrainingError(LinvmapError, RuntimeError):
    """Training aborted, e.g. after too many consecutive rank failures."""

    exit_code = 5


class RankWarning(UserWarning):
    """A least-squares system is rank deficient; the minimum-norm solution was used."""


class DisconnectedGraphWarning(UserWarning):
    """A neighborhood graph has more than one connected component."""
