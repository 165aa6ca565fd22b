"""Exception hierarchy shared by the fitting, design and CLI layers."""


class WLCoxError(Exception):
    """Base class for model-level errors (CLI exit code 2)."""

    code = "model_error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"code": self.code, "message": str(self)}
        for key, value in self.details.items():
            if hasattr(value, "tolist"):
                value = value.tolist()
            out[key] = value
        return out


class DegenerateDataError(WLCoxError):
    code = "degenerate_data"


class NumericalOverflowError(WLCoxError):
    code = "overflow"


class SingularInformationError(WLCoxError):
    code = "singular_information"


class ConvergenceError(WLCoxError):
    code = "no_convergence"


class MonotoneLikelihoodError(ConvergenceError):
    code = "monotone_likelihood"


class DesignError(WLCoxError):
    code = "design_error"


class SchemaError(ValueError):
    """Malformed input file or config (CLI exit code 1)."""

    def __init__(self, message, row=None, path=None):
        super().__init__(message)
        self.row = row
        self.path = path

    def to_dict(self):
        out = {"code": "schema_error", "message": str(self)}
        if self.row is not None:
            out["row"] = self.row
        if self.path is not None:
            out["path"] = self.path
        return out
