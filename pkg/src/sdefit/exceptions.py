"""Exception hierarchy.

Validation problems (bad inputs, bad config) derive from ``ValidationError``;
numerical breakdowns (singular solves, explosions) derive from
``NumericalError``. The CLI maps the first family to exit code 2 and the
second to exit code 3.
"""


class SDEFitError(Exception):
    """Base class for every error raised by sdefit."""


class ValidationError(SDEFitError, ValueError):
    """Input violates a documented invariant."""


class ConfigError(ValidationError):
    """Configuration file or override is malformed.

    Parameters
    ----------
    key : str
        Dotted path of the offending key, e.g. ``"plan.epsilon_grid"``.
    message : str
        Human readable explanation.
    """

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class NumericalError(SDEFitError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class NonFiniteOutput(NumericalError):
    pass


class NotSymmetric(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class SingularDiffusion(IllConditioned):
    pass


class SingularGram(IllConditioned):
    pass


class SingularIntegral(IllConditioned):
    pass


class SingularSigma(IllConditioned):
    pass


class UnstableH(NumericalError):
    """The OU mean-reversion matrix has an eigenvalue with real part <= 0."""


class Blowup(NumericalError):
    """A simulated path left the ball of radius 1e12."""
