"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`MacrostateError`
so the CLI can turn it into a single machine-readable JSON object.
"""


class MacrostateError(Exception):
    """Base class; ``details`` carries extra JSON-serialisable context."""

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": type(self).__name__, "message": str(self)}
        out.update(self.details)
        return out


# input construction
class InvalidInput(MacrostateError, ValueError):
    pass


class AllZeroDensity(InvalidInput):
    pass


class NonFiniteDistance(InvalidInput):
    pass


class AllItemsRemoved(MacrostateError):
    pass


class IsolatedNode(MacrostateError):
    pass


class DisconnectedInput(MacrostateError):
    """Raised with ``components`` giving the number of connected pieces."""


class EmptyGraphAfterPruning(MacrostateError):
    pass


# spectra
class ConvergenceFailure(MacrostateError):
    pass


class DisconnectedSystem(MacrostateError):
    pass


class ZeroDenominator(MacrostateError):
    pass


class NoSeparableStructure(MacrostateError):
    pass


# optimisation
class RankDeficientBasis(MacrostateError):
    pass


class LPInfeasible(MacrostateError):
    pass


class LPUnbounded(MacrostateError):
    pass


class MaxRowGenerationRounds(MacrostateError):
    pass


class DegenerateOptimum(MacrostateError):
    pass


class TooLargeForOracle(MacrostateError):
    pass


# mixture / validation
class ZeroWeightComponent(MacrostateError):
    pass


class SingleClusterInput(MacrostateError):
    pass


class ComponentCountMismatch(MacrostateError):
    pass
