"""Exception hierarchy for spectral-adv."""


class SpectralAdvError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SpectralAdvError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(SpectralAdvError, ArithmeticError):
    """A tensor contains NaN or infinity."""


class GraphError(SpectralAdvError):
    """The computation graph cannot satisfy the request (e.g. non-scalar output)."""


class IDXFormatError(SpectralAdvError, ValueError):
    """An IDX file is malformed: wrong magic, truncated, or inconsistent counts."""


class CheckpointError(SpectralAdvError, ValueError):
    """A checkpoint file does not follow the SADV1 layout."""


class TrainingDivergedError(SpectralAdvError):
    """Training produced a non-finite loss."""


class ConfigError(SpectralAdvError, ValueError):
    """A run configuration is syntactically or semantically invalid."""
