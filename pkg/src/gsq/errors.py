"""Exception hierarchy shared by every gsq module."""


class GSQError(Exception):
    """Base class for all errors raised by gsq."""


class InvalidConfig(GSQError, ValueError):
    pass


class DegenerateVector(GSQError, ValueError):
    """A vector of dim >= 2 has (near) zero norm and cannot be put on the sphere."""


class DimensionMismatch(GSQError, ValueError):
    pass


class IndexOutOfRange(GSQError, IndexError):
    pass


class InvalidPreset(GSQError, ValueError):
    pass


class FixedCodebook(GSQError):
    """Training was requested for a codebook that is fixed by construction."""


class InsufficientData(GSQError, ValueError):
    pass


class DegenerateFit(GSQError):
    pass


class DegenerateDim(GSQError, ValueError):
    pass


class CorruptFile(GSQError):
    pass


class VersionMismatch(CorruptFile):
    pass


class ChecksumMismatch(CorruptFile):
    pass


class UnreadableImage(GSQError):
    pass


class PatchTooLarge(GSQError, ValueError):
    pass
