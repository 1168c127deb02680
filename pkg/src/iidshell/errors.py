"""Exception hierarchy for the iidshell package."""


class IIDShellError(Exception):
    """Base class for all package errors."""

    code = "error"

    def record(self):
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class DimensionMismatch(IIDShellError, ValueError):
    code = "dimension_mismatch"


class NotPositiveDefinite(IIDShellError, ValueError):
    code = "not_positive_definite"


class InvalidRadii(IIDShellError, ValueError):
    code = "invalid_radii"


class InvalidProbability(IIDShellError, ValueError):
    code = "invalid_probability"


class TargetEvaluationError(IIDShellError, ValueError):
    code = "target_evaluation"


class TargetUnevaluable(IIDShellError, RuntimeError):
    code = "target_unevaluable"


class TooFewSamples(IIDShellError, ValueError):
    code = "too_few_samples"


class DegenerateCloud(IIDShellError, ValueError):
    code = "degenerate_cloud"


class EmptyModalRegion(IIDShellError, ValueError):
    code = "empty_modal_region"

    def __init__(self, j, count, needed):
        super().__init__(
            f"modal region {j} holds {count} samples, needs at least {needed}; enlarge its radius"
        )
        self.j = j
        self.count = count
        self.needed = needed


class AllZeroDensity(IIDShellError, RuntimeError):
    code = "all_zero_density"


class NoMassAnywhere(IIDShellError, RuntimeError):
    code = "no_mass_anywhere"


class AllModelsImpossible(IIDShellError, RuntimeError):
    code = "all_models_impossible"


class ZeroMinorization(IIDShellError, RuntimeError):
    """A shell with positive mass was selected but its minorization probability is zero."""

    code = "zero_minorization"


class ShellCapExceeded(IIDShellError, RuntimeError):
    code = "shell_cap_exceeded"


class ConfigError(IIDShellError, ValueError):
    code = "config"


class DataError(IIDShellError, ValueError):
    code = "data"
