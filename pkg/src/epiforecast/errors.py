"""Exception hierarchy shared by all modules."""


class EpiForecastError(Exception):
    pass


class IndexRangeError(EpiForecastError, IndexError):
    """A referenced time index (or truncation depth) lies outside the series."""


class SeasonLookupError(EpiForecastError, KeyError):
    pass


class ForecastValidationError(EpiForecastError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ArgumentError(EpiForecastError, ValueError):
    pass


class DegenerateReferenceError(EpiForecastError, ZeroDivisionError):
    pass


class DegenerateVarianceError(EpiForecastError, ValueError):
    pass


class TrainingError(EpiForecastError, RuntimeError):
    pass


class HorizonError(EpiForecastError, ValueError):
    pass


class GridError(EpiForecastError, ValueError):
    pass


class UnidentifiableError(EpiForecastError, ValueError):
    pass


class DataError(EpiForecastError, ValueError):
    """Malformed input file; carries a list of (line, message) problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        msg = "; ".join(f"line {ln}: {m}" if ln else m for ln, m in self.problems)
        super().__init__(msg)


class ConfigError(EpiForecastError, ValueError):
    pass
