"""Exception types shared across the package."""


class StockOptError(Exception):
    """Base class for all package-specific errors."""


class ParseError(StockOptError):
    """Malformed input file (STL, config, report)."""


class WatertightnessViolation(StockOptError):
    """Mesh has an open or non-manifold edge."""


class NegativeVolume(StockOptError):
    """Mesh orientation is inverted (signed volume <= 0)."""


class EmptyResult(StockOptError):
    """Voxelization produced no occupied cell (spacing too coarse)."""


class EmptyStock(StockOptError):
    """Degenerate stock parameters emptied the part."""


class SolverDiverged(StockOptError):
    """CG failed to converge within the iteration budget."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularSystem(StockOptError):
    """An active component is disconnected from the clamped plane."""


class InvertedElement(StockOptError):
    """A warped tetrahedron has negative volume (unphysical distortion)."""


class EmptyCloud(StockOptError):
    """Point cloud for the thickness constraint is empty."""


class OutOfBox(StockOptError):
    """Surrogate evaluated outside the constraint box."""


class NoFeasiblePoint(StockOptError):
    """No optimizer run ended in the feasible region."""


class LevelFailed(StockOptError):
    """A design-point evaluation failed while building a sparse-grid level."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConfigError(StockOptError):
    """Invalid configuration document."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
