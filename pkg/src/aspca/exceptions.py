"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Bad input: wrong shape, out-of-range parameter, malformed file."""


class InvalidState(RuntimeError):
    """An object is not in a state the operation can use (e.g. unconverged trajectory)."""


class SolverFailure(RuntimeError):
    """Newton iteration did not converge within its iteration budget."""

    def __init__(self, step, residual_norm, message=None):
        self.step = step
        self.residual_norm = residual_norm
        super().__init__(
            message
            or f"Newton failed at step {step}: residual {residual_norm:.3e}"
        )
