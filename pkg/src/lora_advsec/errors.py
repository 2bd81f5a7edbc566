"""Exception types shared across the package.

The CLI maps ConfigError and FormatError to exit code 1 (the caller gave us
something unusable) and any other exception to exit code 2 (we failed while
doing the work).
"""


class ConfigError(ValueError):
    """Invalid configuration: bad layer wiring, option values, or label sets."""


class FormatError(ValueError):
    """Malformed artifact file: bad magic, truncation, or count mismatch."""
