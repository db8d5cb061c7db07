"""Exception hierarchy.

Everything raised on purpose derives from :class:`NvwgmError` so the CLI can
map failures onto exit codes without catching programming errors.
"""


class NvwgmError(Exception):
    pass


class FieldFileError(NvwgmError, ValueError):
    """A field file failed to parse or validate.

    ``line`` is the 1-based line number of the offending line, when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class MalformedHeaderError(FieldFileError):
    pass


class MalformedRowError(FieldFileError):
    pass


class NonMonotonicGridError(FieldFileError):
    pass


class NodeCountMismatchError(FieldFileError):
    pass


class EpsilonRangeError(FieldFileError):
    pass


class GridValidationError(NvwgmError, ValueError):
    pass


class OutOfBoundsError(NvwgmError, ValueError):
    pass


class DegenerateFieldError(NvwgmError, ValueError):
    pass


class NoGuidedModeError(NvwgmError, ValueError):
    pass


class GeometryError(NvwgmError, ValueError):
    pass


class ModeCutoffError(NvwgmError, ValueError):
    def __init__(self, label, v_number):
        self.label = label
        self.v_number = v_number
        super().__init__(f"{label} is below cutoff at V = {v_number:.6g}")


class NormalizationContractError(NvwgmError, ValueError):
    pass


class DegenerateDistributionError(NvwgmError, ValueError):
    pass


class ConfigError(NvwgmError, ValueError):
    """Config validation failure; ``violations`` holds ``(key_path, message)`` pairs."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{key}: {msg}" for key, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
