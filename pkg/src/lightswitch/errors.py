"""Exception hierarchy shared across the package.

Every domain error derives from :class:`SwitchError` so the CLI can map
them to exit code 1 with a JSON error object.
"""


class SwitchError(Exception):
    """Base class for all domain errors."""

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


# geometry
class NonPositiveDepth(SwitchError):
    pass


class OutOfBounds(SwitchError):
    pass


class InsufficientPoints(SwitchError):
    pass


class DegenerateGeometry(SwitchError):
    pass


class NoValidDepth(SwitchError):
    pass


class EmptyInput(SwitchError):
    pass


class InconsistentOrientation(SwitchError):
    pass


class IsotropicCloud(SwitchError):
    pass


# bbox refinement
class EmptyImage(SwitchError):
    pass


class NoLinePixels(SwitchError):
    pass


class OutOfDomain(SwitchError):
    pass


class DegenerateBox(SwitchError):
    pass


# affordance
class OracleUnavailable(SwitchError):
    pass


class MalformedResponse(SwitchError):
    pass


class InconsistentDescriptor(SwitchError):
    pass


class ToggleUnsupported(SwitchError):
    pass


# motion
class HandleOutsideFront(SwitchError):
    pass


class NotRevolute(SwitchError):
    pass


class AngleOutOfRange(SwitchError):
    pass


class NonPositiveLever(SwitchError):
    pass


class TooFewSteps(SwitchError):
    pass


# scene graph
class UnknownVertex(SwitchError):
    pass


class NotASwitch(SwitchError):
    pass


class NotALamp(SwitchError):
    pass


class DuplicateRegistration(SwitchError):
    pass


class SchemaViolation(SwitchError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# simulation / app
class InvalidSpec(SwitchError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvalidConfig(SwitchError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class ConfigError(InvalidConfig):
    pass


class UnknownSwitch(SwitchError):
    pass


class UnknownLamp(SwitchError):
    pass


# metrics
class InvalidCounts(SwitchError):
    pass
