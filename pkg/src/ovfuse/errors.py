"""Exception types raised across the package."""


class OvfuseError(Exception):
    """Base class for every error this package raises deliberately."""


class TensorFormatError(OvfuseError, ValueError):
    pass


class BadMagic(TensorFormatError):
    pass


class ShapeMismatch(OvfuseError, ValueError):
    pass


class TruncatedPayload(TensorFormatError):
    pass


class IoFailure(OvfuseError, OSError):
    pass


class ChannelMismatch(OvfuseError, ValueError):
    pass


class InvalidSpan(OvfuseError, ValueError):
    pass


class EmbeddingCountMismatch(OvfuseError, ValueError):
    pass


class ZeroMap(OvfuseError, ValueError):
    pass


class EmptyMask(OvfuseError, ValueError):
    pass


class AbsentClassScore(OvfuseError, KeyError):
    pass


class DegenerateMesh(OvfuseError, ValueError):
    pass


class NoValidPoints(OvfuseError, ValueError):
    pass


class Uninitialized(OvfuseError, RuntimeError):
    pass


class EmptyName(OvfuseError, ValueError):
    pass


class LabelOutOfRange(OvfuseError, ValueError):
    pass


class EmptySpec(OvfuseError, ValueError):
    pass


class ConfigError(OvfuseError, ValueError):
    pass


class StageError(OvfuseError, RuntimeError):
    """A pipeline stage failed; carries the stage name and offending input."""

    def __init__(self, stage: str, path, cause: BaseException):
        self.stage = stage
        self.path = path
        self.cause = cause
        super().__init__(f"stage '{stage}' failed on {path}: {cause}")
