"""Exception hierarchy shared across the package."""


class LayerCurateError(Exception):
    """Base class for all errors raised by layercurate."""


class GeometryError(LayerCurateError, ValueError):
    """Two objects that must share a clip geometry do not."""


class EmptyMaskError(LayerCurateError, ValueError):
    """An operation needs a nonempty mask and received an empty one."""


class ProviderError(LayerCurateError):
    """A segmentation or propagation provider failed or broke its contract."""


class PropagationCoverageError(ProviderError):
    """A propagated masklet does not reproduce its prompt mask."""


class CapacityError(LayerCurateError, ValueError):
    """More layers than the configured capacity, or none at all."""


class FormatError(LayerCurateError):
    """Base class for binary file format errors."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class LengthMismatchError(FormatError):
    """Payload is truncated or carries trailing bytes."""


class CorruptPayloadError(FormatError):
    """Header and length are fine but the content violates an invariant."""


class ManifestError(LayerCurateError, ValueError):
    """Manifest or config document is malformed."""
