"""Exception types shared across the package."""


class BFFGError(Exception):
    """Base class for all library errors."""


class ShapeError(BFFGError, ValueError):
    """A point, potential or measure does not fit the space it is used on."""


class SpaceMismatchError(BFFGError, ValueError):
    """Two objects that must live on the same space do not."""


class UnsupportedPairingError(BFFGError, TypeError):
    """No closed form exists for the requested combination of families."""


class NumericalError(BFFGError, ArithmeticError):
    """A factorization failed or a denominator vanished.

    ``context`` carries the node or edge identifier when the failure is
    raised from the tree driver.
    """

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context

    def __str__(self):
        base = super().__str__()
        if self.context is None:
            return base
        return f"{base} (at {self.context})"


class ZeroDenominatorError(NumericalError):
    """A message was evaluated where its denominator potential is zero."""


class ModelError(BFFGError, ValueError):
    """A tree model or model file is malformed."""
