"""Exception taxonomy shared across the package.

Every error raised by this package derives from MasfError so callers can
catch the whole family with one clause.  Subclasses also inherit from the
closest builtin (ValueError / OSError) to stay friendly to generic handlers.
"""


class MasfError(Exception):
    """Base class for all errors raised by this package."""


class OutOfRange(MasfError, ValueError):
    """A numeric argument fell outside its documented domain."""


class EmptySample(MasfError, ValueError):
    """An empirical operation received an empty calibration sample."""


class EmptyVector(MasfError, ValueError):
    """A combination test received an empty p-value vector."""


class ZeroPValue(MasfError, ValueError):
    """A p-value of zero or below reached a log-based combiner."""


class LengthMismatch(MasfError, ValueError):
    """Two paired sequences disagreed in length."""


class EmptyBatch(MasfError, ValueError):
    """observe_batch was called with no values."""


class FrozenTracker(MasfError, RuntimeError):
    """A tracker was fed after finalize, or finalized twice."""


class NotFinalized(MasfError, RuntimeError):
    """A table was requested from a tracker that never finalized."""


class InsufficientData(MasfError, ValueError):
    """A tracker finalized before observing one full batch."""


class InsufficientSamples(MasfError, ValueError):
    """Calibration received fewer samples than the split mode requires."""


class MissingLabels(MasfError, ValueError):
    """Calibration requires labels but the manifest lacks them."""


class UncalibratedClass(MasfError, KeyError):
    """Scoring was asked for a class the detector was never calibrated on."""


class DimensionMismatch(MasfError, ValueError):
    """A vector did not match the dimension of fitted parameters."""


class DegenerateCovariance(MasfError, ValueError):
    """A covariance estimate was not positive definite even after ridging."""


class ArityMismatch(MasfError, ValueError):
    """A reduction received inputs inconsistent with its declared arity."""


class MalformedManifest(MasfError, ValueError):
    """A manifest violated its schema or referenced impossible metadata."""


class MissingTensor(MasfError, OSError):
    """A manifest referenced a tensor file that does not exist."""


class ShapeMismatch(MasfError, ValueError):
    """A tensor's dimensions disagreed with its layer descriptor."""


class NonFiniteTensor(MasfError, ValueError):
    """A tensor payload contained NaN or infinite values."""


class CorruptArtifact(MasfError, ValueError):
    """A serialized artifact failed structural validation."""


class VersionMismatch(MasfError, ValueError):
    """A serialized artifact declares an unsupported format version."""


class EmptyScores(MasfError, ValueError):
    """A metric received an empty score set."""


class TooFewSamples(MasfError, ValueError):
    """A statistical test received fewer samples than it supports."""


class UnknownScheme(MasfError, ValueError):
    """A scheme string or reduction tag is not recognized."""
