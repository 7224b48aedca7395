"""Exception hierarchy shared by the library, the service and the CLI.

Three error families map onto the CLI exit codes and HTTP statuses:
config errors (bad parameters or run configuration), data-format errors
(unreadable or invalid files on disk), and contract errors (in-memory data
violating an operation's contract, e.g. mismatched grids or an out-of-range
model output).
"""


class PetfuseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PetfuseError):
    """Invalid parameter, flag or run configuration."""


class DataFormatError(PetfuseError):
    """A file on disk is malformed, truncated or unsupported."""


class ContractError(PetfuseError):
    """In-memory data violates an operation's contract."""
