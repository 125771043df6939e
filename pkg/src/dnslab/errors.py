"""Exception hierarchy shared by all dnslab modules."""


class DnslabError(Exception):
    """Base class for every error raised by dnslab."""


class ParamError(DnslabError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ShapeError(DnslabError, ValueError):
    pass


class CFLError(DnslabError):
    pass


class PositivityError(DnslabError):
    """A field that must stay strictly positive lost positivity."""


class OverflowFieldError(DnslabError):
    """Near-vacuum amplification produced a non-finite value."""


class KrylovError(DnslabError):
    def __init__(self, message, residuals=()):
        self.residuals = list(residuals)
        super().__init__(message)


class NonContractionError(DnslabError):
    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class ConfigError(DnslabError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


class SnapshotError(DnslabError):
    pass
