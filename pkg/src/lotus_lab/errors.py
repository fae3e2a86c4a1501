"""Exception types shared across the package."""


class LabError(Exception):
    """Base class for all errors raised by lotus_lab."""

    code = "lab_error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidInputError(LabError, ValueError):
    """An argument violates an operation's precondition."""

    code = "invalid_input"


class NonFiniteError(LabError, FloatingPointError):
    """A NaN or infinity appeared where finite numbers are required."""

    code = "non_finite"

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer

    def to_dict(self):
        d = super().to_dict()
        if self.layer is not None:
            d["layer"] = self.layer
        return d


class TrainingError(LabError, RuntimeError):
    """Training finished without meeting its required accuracy."""

    code = "training_failed"

    def __init__(self, message, accuracy=None):
        super().__init__(message)
        self.accuracy = accuracy

    def to_dict(self):
        d = super().to_dict()
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        return d


class MissingArtifactError(LabError, FileNotFoundError):
    """A checkpoint, dump or manifest required by a command is absent."""

    code = "missing_artifact"
