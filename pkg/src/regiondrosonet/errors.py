"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Arguments or data violate a precondition."""


class FormatError(ValueError):
    """A file on disk could not be decoded (bad magic, checksum, CSV row, image)."""


class StateError(RuntimeError):
    """An object was used before it reached the required state, e.g. inference on an untrained ensemble."""
