class RemixITError(Exception):
    """Base class for errors raised by this package."""


class SignalError(RemixITError, ValueError):
    pass


class CheckpointError(RemixITError, ValueError):
    pass


class CorpusError(RemixITError, ValueError):
    pass


class DivergenceError(RemixITError, FloatingPointError):
    """Raised when training produces non-finite values."""


class ConfigError(RemixITError, ValueError):
    pass


class AnalysisError(RemixITError, ValueError):
    pass
