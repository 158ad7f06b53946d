"""Exception types shared across modules."""


class ConfigurationError(ValueError):
    """Invalid run configuration (bad extent, missing class, schedule mismatch)."""


class ExplanationInfeasibleError(RuntimeError):
    """No valid explanation could be produced for this instance."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
