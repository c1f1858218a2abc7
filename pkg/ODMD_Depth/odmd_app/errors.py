"""Exception hierarchy shared by the library, the CLI and the API service.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class OdmdError(Exception):
    """Base class for all ODMD errors"""
    exit_code = 1


class DomainError(OdmdError):
    """A value lies outside the domain of a geometric or metric operation"""
    exit_code = 2


class DegenerateGeometry(OdmdError):
    """Observations carry no usable depth cue"""
    exit_code = 2

    def __init__(self, message: str, condition: Optional[float] = None):
        super().__init__(message)
        self.condition = condition


class ConfigError(OdmdError):
    exit_code = 2


class ContractError(OdmdError):
    """Array shapes disagree with what an operation was built for"""
    exit_code = 2


class InputError(OdmdError):
    exit_code = 2


class ParseError(OdmdError):
    """Malformed dataset, config or report input"""
    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None,
                 offset: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"offset {offset}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.line = line
        self.offset = offset
        self.field = field


class VersionError(OdmdError):
    exit_code = 4


class CompatibilityError(OdmdError):
    """Checkpoint and data disagree on n or loss mode"""
    exit_code = 4


class NumericAbort(OdmdError):
    exit_code = 3
