"""Exception hierarchy shared by the library and the command-line runner."""


class CohworkError(Exception):
    """Base class for all errors raised by cohwork."""


class NonHermitianError(CohworkError, ValueError):
    """An operator expected to be Hermitian is not.

    The offending symmetry violation ``max|H - H^dagger|`` is kept on the
    ``violation`` attribute.
    """

    def __init__(self, violation, tol):
        self.violation = float(violation)
        self.tol = float(tol)
        super().__init__(
            f"matrix is not Hermitian: max|H - H^dagger| = {violation:.3e} "
            f"exceeds {tol:.1e}")


class InvalidStateError(CohworkError, ValueError):
    """A density matrix fails trace, hermiticity or positivity checks."""


class DimensionMismatchError(CohworkError, ValueError):
    pass


class NumericalBreakdownError(CohworkError, ArithmeticError):
    """A quantity that must be real came out with a sizeable imaginary part."""


class CapacityError(CohworkError):
    """Exact enumeration refused because the problem is too large."""


class ConfigError(CohworkError, ValueError):
    """Experiment configuration does not match the schema.

    ``path`` holds the offending key path, e.g. ``"sweep[1].param"``.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
