"""Exception types shared across the package."""


class ShortmemError(Exception):
    """Base class for every error raised by this package."""

    #: CLI exit code the error maps to.
    exit_code = 2

    def to_json(self):
        payload = {"error": type(self).__name__, "message": str(self)}
        payload.update(getattr(self, "details", {}) or {})
        return payload


class ModelFormatError(ShortmemError):
    """A model or policy file could not be parsed."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.details = {"path": path}


class ShapeError(ModelFormatError):
    """An array in a model file has the wrong shape."""


class ValidationError(ShortmemError):
    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"model failed validation: {head}{more}")
        self.details = {"violations": [str(v) for v in self.violations]}


class ImpossibleObservation(ShortmemError):
    """Raised when an observation has (numerically) zero probability under a belief."""

    def __init__(self, step, observation, mass=0.0):
        super().__init__(
            f"observation {observation} at step {step} has probability {mass:.3g} under the current belief"
        )
        self.step = step
        self.observation = observation
        self.details = {"step": step, "observation": observation}


class BudgetExceeded(ShortmemError):
    def __init__(self, what, required, budget):
        super().__init__(f"{what}: needs {required} but budget is {budget}")
        self.required = required
        self.budget = budget
        self.details = {"required": required, "budget": budget}


class SizeBudgetExceeded(BudgetExceeded):
    def __init__(self, S, A, H, budget, entries):
        super().__init__(f"generated model too large (S={S}, A={A}, H={H})", entries, budget)
        self.S, self.A, self.H = S, A, H
        self.details.update({"S": S, "A": A, "H": H})


class DimensionTooLarge(ShortmemError):
    pass


class UnknownExample(ShortmemError):
    exit_code = 1


class Infeasible(ShortmemError):
    pass


class Unbounded(ShortmemError):
    pass


class MaxIterations(ShortmemError):
    pass
