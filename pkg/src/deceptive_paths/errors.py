"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class DPPError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class InvalidArgumentError(DPPError, ValueError):
    """Unknown node id, bad shape, or otherwise malformed argument."""

    exit_code = 2


class InvalidConfigurationError(DPPError, ValueError):
    """A configuration that cannot define a meaningful episode or metric."""

    exit_code = 2


class InternalConsistencyError(DPPError):
    """Caller violated a precondition that the library cannot repair."""


class ParseError(DPPError, ValueError):
    """Malformed map, world, or checkpoint file."""


class GeometryError(DPPError):
    """Degenerate geometric input (e.g. collinear generators)."""


class NoActionError(DPPError):
    """The agent node has no incident edges."""


class ConvergenceError(DPPError):
    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegeneratePosteriorError(DPPError):
    exit_code = 4


class NumericError(DPPError):
    """Non-finite gradient or loss; ``name`` identifies the offending quantity."""

    exit_code = 4

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name


class SearchSpaceError(DPPError):
    """Exhaustive search refused because the instance is too large."""


class CheckpointError(DPPError):
    """Checkpoint version, shape, config, or checksum mismatch."""
