"""Exception types raised across the package."""


class OptospringError(Exception):
    """Base class for all package errors."""


class ConfigError(OptospringError, ValueError):
    """Configuration failed validation.

    ``errors`` is a list of ``(field, message)`` pairs, one per violated
    invariant, with dotted/indexed field paths such as
    ``oscillators[0].gamma``.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{field}: {msg}" for field, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class Unstable(OptospringError):
    """The linearized dynamics has a growing mode (regenerative regime)."""


class NoBoundaryInRange(OptospringError):
    pass


class ScheduleGap(OptospringError):
    """A pulse schedule is not contiguous on the integration grid."""


class StepTooCoarse(OptospringError):
    pass


class BelowFloor(OptospringError, ValueError):
    pass


class DegenerateSidebands(OptospringError, ValueError):
    pass


class DegenerateVariance(OptospringError, ValueError):
    pass


class IllConditioned(OptospringError):
    pass


class InsufficientSamples(OptospringError, ValueError):
    pass


class NegativeCorrectedVariance(OptospringError):
    pass
