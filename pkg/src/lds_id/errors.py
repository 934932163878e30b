"""Exception types shared across the package."""


class LdsIdError(Exception):
    pass


class DimensionError(LdsIdError, ValueError):
    pass


class ParameterError(LdsIdError, ValueError):
    pass


class InstabilityError(LdsIdError, ValueError):
    """Raised when a matrix with spectral radius >= 1 is used where stability is required."""

    def __init__(self, rho, msg=None):
        self.rho = float(rho)
        super().__init__(msg or f"system is not strictly stable: spectral radius {self.rho:.6g} >= 1")


class ResourceError(LdsIdError, MemoryError):
    pass


class DivergenceError(LdsIdError, ArithmeticError):
    def __init__(self, iteration, msg=None):
        self.iteration = int(iteration)
        super().__init__(msg or f"non-finite objective at iteration {self.iteration}")


class UnsupportedCheckError(LdsIdError):
    pass


class IntegrationError(LdsIdError, ArithmeticError):
    pass


class InsufficientDataError(LdsIdError, ValueError):
    pass


class SchemaError(LdsIdError, ValueError):
    pass
