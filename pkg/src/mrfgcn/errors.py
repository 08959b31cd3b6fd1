"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
runtime failures exit 2, self-check failures exit 3.
"""


class StructuralInputError(ValueError):
    """Malformed structural input (bad endpoints, inconsistent shapes)."""


class ParseError(StructuralInputError):
    """A file could not be parsed; carries file and line context."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DegenerateInputError(ValueError):
    """Input is structurally valid but the requested quantity is undefined."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class EnumerationLimitError(RuntimeError):
    """Exact enumeration was refused because the state space is too large."""


class StaleCacheError(RuntimeError):
    """A backward pass was requested against a cache from different parameters."""


class NonFiniteObjectiveError(RuntimeError):
    """The training objective became non-finite; carries the offending node."""
