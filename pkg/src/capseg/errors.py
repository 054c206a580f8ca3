"""Exception taxonomy shared by the library and the CLI.

The CLI maps these onto process exit codes: validation and configuration
problems exit 2, transport problems exit 3, partial dataset failures exit 4.
"""

from __future__ import annotations


class CapsegError(Exception):
    """Base class for all package errors."""


class ValidationError(CapsegError):
    """Malformed input data or arguments that violate a documented contract."""


class ConfigError(ValidationError):
    """Bad configuration file or flag combination."""


class NotFoundError(ValidationError):
    """A referenced id (cluster, image, class name) does not exist."""


class TransportError(CapsegError):
    """A remote service stayed unreachable after retries.

    ``partial`` carries whatever results were completed before the failure so
    callers can persist or inspect them.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class PartialFailureError(CapsegError):
    """Some dataset items failed; carries per-item error summaries."""

    def __init__(self, message: str, failures: dict[str, str]):
        super().__init__(message)
        self.failures = failures
