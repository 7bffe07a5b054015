"""Exception hierarchy shared across the package."""


class HmmDropError(Exception):
    """Base class for all package errors."""


class InvalidInput(HmmDropError, ValueError):
    pass


class SingularCovariance(HmmDropError, ArithmeticError):
    """A covariance block failed its Cholesky factorization."""


class ParseError(InvalidInput):
    def __init__(self, line, message="unparseable value"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InvalidDropout(InvalidInput):
    def __init__(self, subject, t, message="invalid dropout sequence"):
        self.subject = subject
        self.t = t
        super().__init__(f"subject {subject!r}, t={t}: {message}")


class InconsistentRow(InvalidInput):
    def __init__(self, subject, t, message="observed response on a dropout occasion"):
        self.subject = subject
        self.t = t
        super().__init__(f"subject {subject!r}, t={t}: {message}")


class DegenerateComponent(HmmDropError):
    """A latent state or mixture component lost (almost) all posterior mass."""


class ImpossibleObservation(HmmDropError):
    def __init__(self, subject, t):
        self.subject = subject
        self.t = t
        super().__init__(f"subject index {subject}, t={t}: observation has zero probability "
                         "under every latent state")


class NewtonFailed(HmmDropError):
    """Newton-Raphson did not reach a stationary point.

    ``best`` holds the best iterate found (never worse than the start).
    """

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class FitFailed(HmmDropError):
    pass


class BootstrapFailed(HmmDropError):
    pass
