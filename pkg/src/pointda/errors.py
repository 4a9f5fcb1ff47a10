"""Exception types.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line error report so scripts can parse failures.
"""


class PointDAError(Exception):
    category = "runtime"
    exit_code = 1


class InvalidArgumentError(PointDAError, ValueError):
    category = "invalid-argument"


class OutOfRangeError(PointDAError, ValueError):
    category = "out-of-range"


class EmptyGroundTruthError(PointDAError):
    """Raised when a cost matrix is requested for an image without points."""

    category = "empty-ground-truth"


class InfeasibleAssignmentError(PointDAError):
    category = "infeasible-assignment"


class ContractViolationError(PointDAError):
    category = "contract-violation"


class TrainingDivergenceError(PointDAError, FloatingPointError):
    category = "training-divergence"

    def __init__(self, component, components=None):
        self.component = component
        self.components = dict(components or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.components.items())
        msg = f"non-finite loss component {component!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class PlacementError(PointDAError):
    category = "placement-failure"


class DatasetIntegrityError(PointDAError):
    category = "dataset-integrity"


class AnnotationParseError(DatasetIntegrityError):
    category = "parse-error"


class MissingLabelsError(PointDAError):
    category = "missing-labels"


class InvalidInputError(PointDAError, ValueError):
    category = "invalid-input"


class ConfigError(PointDAError, ValueError):
    category = "config"
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
