"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input; ``path`` names the offending field (e.g. ``fields.sigma2[1]``)."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NumericalAbort(RuntimeError):
    """A computation left its admissible regime (blowup, singular Jacobian, ...)."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        self.step = step
        self.time = time
        where = ""
        if step is not None:
            where = f" at step {step}"
            if time is not None:
                where += f" (t={time:.6g})"
        super().__init__(message + where)


class InversionError(NumericalAbort):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message}; best residual {residual:.3e}")
