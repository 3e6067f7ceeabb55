"""Exception hierarchy shared across the package."""


class ProbeforgeError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(ProbeforgeError):
    """A file or config document failed to parse or violated its schema."""


class AlignmentError(ProbeforgeError):
    """Chip table and embedding set could not be joined."""


class DegenerateVarianceError(ProbeforgeError):
    """A metric input had (near-)zero variance; the run carries no signal."""


class GridError(ProbeforgeError):
    """An experiment grid is malformed (e.g. an empty axis)."""
