"""Exception types shared across the toolkit."""


class InvalidArgument(ValueError):
    pass


class NumericDomainError(ArithmeticError):
    pass


class BracketError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class InvalidObservation(ValueError):
    pass


class SEDegenerateError(ArithmeticError):
    pass


class InconsistentSEError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, msg, iteration=None):
        super().__init__(msg)
        self.iteration = iteration


class TheoryDomainError(ValueError):
    pass


class ConfigError(ValueError):
    pass
