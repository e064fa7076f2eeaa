class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericalError(ArithmeticError):
    """A learner produced a non-finite quantity; ``diagnostics`` holds the step context."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(f"{message} {self.diagnostics}" if self.diagnostics else message)
