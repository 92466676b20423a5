"""Exception types shared across the package.

Every error raised on purpose derives from OovForgeError so callers (and the
CLI exit-code mapping) can distinguish expected failures from bugs.
"""


class OovForgeError(Exception):
    """Base class for all errors this package raises deliberately."""


class ShapeError(OovForgeError):
    """Operands have incompatible shapes; message carries both shapes."""


class NumericError(OovForgeError):
    """Non-finite values or degenerate numeric input (zero norms, NaN)."""


class GraphError(OovForgeError):
    """Misuse of the autodiff tape (e.g. backward on a non-scalar)."""


class InputError(OovForgeError):
    """A model or episode received input outside its contract."""


class IngestionError(OovForgeError):
    """Corpus or embedding file could not be read or parsed."""


class FormatError(OovForgeError):
    """A serialized artifact (checkpoint, TSV, report) is malformed."""


class EpisodeError(OovForgeError):
    """Episode construction failed (e.g. missing oracle vector)."""


class TrainingError(OovForgeError):
    """Training aborted (divergence, bad data)."""


class AdaptationError(OovForgeError):
    """Adaptation could not run (e.g. no eligible target words)."""


class InferenceError(OovForgeError):
    """Single-word inference failed (e.g. word absent from contexts)."""


class EvaluationError(OovForgeError):
    """Benchmark evaluation failed (e.g. undefined correlation)."""
