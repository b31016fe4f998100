"""Exception hierarchy shared across the package."""


class SimError(Exception):
    """Base class for all simulation errors."""


# event queue
class PastTimestamp(SimError):
    pass


class EmptyQueue(SimError):
    pass


class MixedTick(SimError):
    pass


# engine
class InvalidSeedData(SimError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class ConfigError(SimError):
    pass


class UnknownAttribute(SimError):
    pass


# graph
class InvalidParams(SimError):
    pass


class InvalidFraction(SimError):
    pass


class GraphFileError(SimError):
    pass


class BadMagic(GraphFileError):
    pass


class VersionMismatch(GraphFileError):
    pass


class TruncatedFile(GraphFileError):
    pass


# inference
class NoBackendAvailable(SimError):
    pass


class BackendError(SimError):
    pass


class SchemaViolation(SimError):
    pass


class TemplateError(SimError):
    pass


# surrogate
class TeacherFailure(SimError):
    pass


class DegenerateData(SimError):
    pass


class InvalidFeature(SimError):
    pass


class FeatureDecodeError(SimError):
    pass


class ModelFileError(SimError):
    pass


# scenarios
class ProfileFileError(SimError):
    pass
