"""Exception types shared across the codec."""


class CodecError(Exception):
    """Base class for all codec failures."""


class ShapeError(CodecError):
    """Tensor dimensions inconsistent with an operation's contract."""


class ConfigurationError(CodecError):
    """Invalid static configuration (profiles, slice layouts, specs)."""


class WeightsError(CodecError):
    """Malformed or mismatching weight archive."""


class BitstreamError(CodecError):
    """Malformed, truncated, or mismatching bitstream."""


class ImageError(CodecError):
    """Unreadable or unsupported image file."""
