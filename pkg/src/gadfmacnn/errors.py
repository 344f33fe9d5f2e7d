"""Exception hierarchy.

Every error carries a ``category`` string; the CLI prints it on failure so
scripts can branch on the kind of problem without parsing messages.
"""


class DiagError(Exception):
    category = "error"


class ConfigError(DiagError, ValueError):
    category = "config"


# ingestion / data
class MissingColumn(DiagError, KeyError):
    category = "ingest"

    def __str__(self):  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ParseError(DiagError, ValueError):
    category = "ingest"


class WindowTooLong(DiagError, ValueError):
    category = "data"


class InsufficientClassSamples(DiagError, ValueError):
    category = "data"


class InsufficientData(DiagError, ValueError):
    category = "data"


class LabelOutOfRange(DiagError, ValueError):
    category = "data"


# encoding
class DegenerateRange(DiagError, ValueError):
    category = "encode"


class BadTarget(DiagError, ValueError):
    category = "encode"


class DomainError(DiagError, ValueError):
    category = "encode"


class LengthMismatch(DiagError, ValueError):
    category = "encode"


# containers
class IoError(DiagError, OSError):
    category = "io"


class FormatVersionMismatch(DiagError, ValueError):
    category = "io"


# networks / training
class ShapeMismatch(DiagError, ValueError):
    category = "shape"


class BadReduction(DiagError, ValueError):
    category = "model"


class BadKernel(DiagError, ValueError):
    category = "model"


class NonFiniteGradient(DiagError, FloatingPointError):
    category = "numeric"


class NonFiniteLoss(DiagError, FloatingPointError):
    category = "numeric"


class NonFiniteActivation(DiagError, FloatingPointError):
    category = "numeric"


class TooFewSamples(DiagError, ValueError):
    category = "eval"


class StaleUpstream(DiagError, RuntimeError):
    category = "pipeline"
