"""Exception hierarchy shared by the estimation core and the command surface."""


class CateError(Exception):
    """Base class for all errors raised on purpose by this package."""


class ConfigError(CateError, ValueError):
    """Invalid run configuration. Carries every problem found, not just the first."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(CateError, ValueError):
    """Input data that cannot be estimated on (parse failures, empty arms, ...)."""


class NumericalError(CateError, RuntimeError):
    """A numerical step failed in a way no fallback can absorb."""
