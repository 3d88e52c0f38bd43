class JointREError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(JointREError, ValueError):
    pass


class ContractError(JointREError):
    pass


class SequenceLengthError(JointREError, ValueError):
    pass


class AnnotationError(JointREError, ValueError):
    pass


class ParseError(JointREError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(JointREError, ValueError):
    pass


class CandidateError(JointREError, ValueError):
    pass


class ConfigError(JointREError):
    pass


class NumericError(JointREError, FloatingPointError):
    pass


class CheckpointError(JointREError):
    pass
