"""Exception hierarchy.

Every exception carries a short machine-readable ``code`` which the CLI
prints as the prefix of its single-line error message.
"""


class SgpsdeError(Exception):
    code = "E_GENERIC"


class ConfigurationError(SgpsdeError, ValueError):
    code = "E_CONFIG"


class UsageError(SgpsdeError, ValueError):
    code = "E_USAGE"


class NumericalError(SgpsdeError, ArithmeticError):
    code = "E_NUMERIC"


class DecompositionError(NumericalError):
    """Cholesky factorization failed.

    ``pivot`` is the zero-based index of the first non-positive pivot.
    """

    code = "E_DECOMP"

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class InferenceError(SgpsdeError):
    code = "E_INFERENCE"

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class FitError(SgpsdeError):
    code = "E_FIT"

    def __init__(self, message, restart_diagnostics=None):
        super().__init__(message)
        self.restart_diagnostics = restart_diagnostics or []


class SimulationError(SgpsdeError):
    code = "E_SIMULATION"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IngestionError(SgpsdeError):
    code = "E_INGEST"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class PreprocessingError(SgpsdeError):
    code = "E_PREPROCESS"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ModelFileError(SgpsdeError):
    code = "E_PARSE"


class VersionError(ModelFileError):
    code = "E_VERSION"
