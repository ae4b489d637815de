"""Exception hierarchy shared by all modules."""


class PilotWaveError(Exception):
    """Base class for every error raised by the package."""


# grid
class InvalidExtent(PilotWaveError, ValueError):
    pass


class GridMismatch(PilotWaveError, ValueError):
    pass


class NotNormalized(PilotWaveError, ValueError):
    pass


# propagate
class SolveDiverged(PilotWaveError, RuntimeError):
    pass


class UnstableStep(PilotWaveError, RuntimeError):
    pass


class SpinDimMismatch(PilotWaveError, ValueError):
    pass


# guidance / polar
class OutOfBox(PilotWaveError, ValueError):
    pass


class SpinorNotSupported(PilotWaveError, ValueError):
    pass


class UnwrapInconsistent(PilotWaveError, RuntimeError):
    pass


# trajectory
class EscapedBox(PilotWaveError, RuntimeError):
    pass


# observables
class IncompleteSpec(PilotWaveError, ValueError):
    pass


class BudgetExceeded(PilotWaveError, ValueError):
    pass


class OverlapAtReadout(PilotWaveError, RuntimeError):
    pass


class OnSymmetryPlane(PilotWaveError, ValueError):
    pass


# subsystem
class NullSlice(PilotWaveError, ValueError):
    pass


class BinUnderflow(PilotWaveError, RuntimeError):
    pass


# cli
class ConfigError(PilotWaveError, ValueError):
    pass


class ScenarioError(PilotWaveError, RuntimeError):
    pass
