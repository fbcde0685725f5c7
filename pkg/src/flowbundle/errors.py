"""Exception and warning types shared across the package.

Exceptions are grouped by the exit code the CLI maps them to:
config errors (2), data errors (3), analysis errors (4).
"""


class FlowBundleError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowBundleError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class DataError(FlowBundleError):
    """Malformed or insufficient input data (CLI exit code 3)."""


class AnalysisError(FlowBundleError):
    """A computation could not produce a meaningful result (CLI exit code 4)."""


# -- patch_core --------------------------------------------------------------

class ZeroContrast(DataError):
    """Patch has (numerically) constant flow; it cannot be contrast-normalized."""


class Undirectional(AnalysisError):
    """Patch is isotropic: the two singular values coincide, no predominant direction."""


class DegenerateSpectrumWarning(UserWarning):
    """PCA axes are not unique because trailing singular values coincide."""


# -- flow_io -----------------------------------------------------------------

class BadMagic(DataError):
    """.flo file does not start with the 202021.25 float tag."""


class TruncatedFile(DataError):
    """.flo or dataset payload is shorter than its header promises."""


class BadDims(DataError):
    """.flo header declares nonpositive or absurd dimensions."""


class InsufficientValidArea(DataError):
    """A frame cannot supply the requested number of valid patch windows."""


class EmptyResult(DataError):
    """A filtering step removed every record."""


class TooFew(DataError):
    """Requested more records than the dataset holds."""


# -- models ------------------------------------------------------------------

class DomainError(ConfigError):
    """Parameter outside its mathematical domain (e.g. r not in (0, 1])."""


class CountMismatch(AnalysisError):
    """Step-edge enumeration did not produce the expected 56 masks."""


# -- density -----------------------------------------------------------------

class KTooLarge(ConfigError):
    """k-NN order k must be smaller than the dataset size."""


# -- persistence -------------------------------------------------------------

class TooLarge(ConfigError):
    """Point set exceeds the resource guard for the requested max dimension."""


class NotPrime(ConfigError):
    """Coefficient field order is not prime."""


# -- circular_coords ---------------------------------------------------------

class NoClass(AnalysisError):
    """No usable 1-dimensional persistence class for circular coordinates."""


class LiftFailure(AnalysisError):
    """Integer lift of the cocycle is inconsistent; retry with another prime."""


# -- bundle ------------------------------------------------------------------

class BadParams(ConfigError):
    """Cover parameters outside their allowed range."""


class TooFewPairs(DataError):
    """Procrustes alignment needs at least two matched pairs."""


class ThinOverlap(DataError):
    """A nerve edge has fewer than two shared points with coordinates."""


class AntipodalDegenerate(AnalysisError):
    """Weighted angles are antipodally balanced; the Karcher mean is not canonical."""


class SignAmbiguous(AnalysisError):
    """Third-moment sign resolution of the lifted direction is numerically zero."""


class SpectralGapWarning(UserWarning):
    """Synchronization eigenproblem has a (near-)degenerate top eigenvalue."""


class EmptyFiberWarning(UserWarning):
    """A cover set received too few data points to be statistically usable."""


# -- cluster_graph -----------------------------------------------------------

class PoorMatch(AnalysisError):
    """Cluster mean is far from every catalog step-edge flow patch."""


class TooSmall(DataError):
    """Component has too few points for circular analysis."""


# -- cli ---------------------------------------------------------------------

class MissingArtifact(DataError):
    """A pipeline stage requires an artifact that has not been produced yet."""
