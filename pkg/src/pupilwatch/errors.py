class FormatError(ValueError):
    """A binary artifact (weights, window archive) is malformed or incompatible."""
