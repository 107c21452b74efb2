"""Exception types shared across the toolkit.

All of these derive from ValueError so callers that do not care about the
distinction can catch one base class.
"""


class FormatError(ValueError):
    """File does not carry the expected magic or header structure."""


class PayloadError(ValueError):
    """Payload length disagrees with the header dimensions."""


class DataError(ValueError):
    """Values violate an invariant (non-finite, degenerate, out of contract)."""


class ShapeError(ValueError):
    """Array dimensions do not match the operation contract."""


class RangeError(ValueError):
    """Index or coordinate falls outside the valid range."""
