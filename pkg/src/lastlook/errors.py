"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericalError`
to exit code 1. Input errors raised by pure kernels subclass ``ValueError`` so
they also behave like ordinary argument errors.
"""


class LastLookError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(LastLookError):
    """Invalid or incomplete configuration."""


class MissingKey(ConfigError, KeyError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"MissingKey: required key '{self.key}' not found"


class BadValue(ConfigError, ValueError):
    def __init__(self, key: str, detail: str):
        super().__init__(key, detail)
        self.key = key
        self.detail = detail

    def __str__(self) -> str:
        return f"BadValue: key '{self.key}': {self.detail}"


class InvariantViolation(ConfigError, ValueError):
    def __init__(self, rule: str):
        super().__init__(rule)
        self.rule = rule

    def __str__(self) -> str:
        return f"InvariantViolation: {self.rule}"


class UnknownPreset(ConfigError, KeyError):
    def __str__(self) -> str:
        return f"UnknownPreset: {self.args[0]!r}"


class UnknownFigure(ConfigError, KeyError):
    def __str__(self) -> str:
        return f"UnknownFigure: {self.args[0]!r}"


class InputError(LastLookError, ValueError):
    """A pure function received arguments outside its domain."""


class NonPositiveNu(InputError):
    pass


class NegativeTolerance(InputError):
    pass


class QuoteDependentToxicity(InputError):
    pass


class OffGrid(InputError):
    pass


class TooFewPaths(InputError):
    pass


class NumericalError(LastLookError):
    """A numerical routine failed to produce a trustworthy answer."""


class NoSignChange(NumericalError):
    pass


class MaxIterations(NumericalError):
    pass


class OptimizerFailure(NumericalError):
    pass


class RootBracketFailure(NumericalError):
    pass


class StabilityViolation(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class DegenerateSigma(NumericalError):
    pass


class NoSolution(NumericalError):
    pass


class PolicyGridBreach(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass
