"""
Exceptions raised by the recon package. Plain argument errors are raised
as ValueError at the call site; everything that describes a failure of the
numerical pipeline or of an input file derives from ReconError.
"""

from typing import Iterable, Optional


class ReconError(Exception):
    """Base class of all recon errors."""


class MeshError(ReconError, ValueError):
    """A mesh violates one of its structural invariants."""


class MeshFormatError(MeshError):
    """
    A mesh file could not be parsed.

    Args:
        message (str): What went wrong
        lineno (int): 1-based line number of the offending line
    """
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f'line {lineno}: {message}'
        super().__init__(message)


class ConfigurationError(ReconError, ValueError):
    """
    A partition, scenario or experiment config is inconsistent.

    Args:
        message (str): What went wrong
        keys (Iterable[str]): Offending config keys, if any
    """
    def __init__(self, message: str, keys: Optional[Iterable[str]] = None):
        self.keys = sorted(keys) if keys is not None else []
        if self.keys:
            message = f'{message}: {", ".join(self.keys)}'
        super().__init__(message)


class SolverError(ReconError, RuntimeError):
    """
    A sparse factorization failed or missed the residual contract.

    Args:
        message (str): What went wrong
        diagnostic (str): Pivot message, residual or coefficient range
    """
    def __init__(self, message: str, diagnostic: str = ''):
        self.diagnostic = diagnostic
        if diagnostic:
            message = f'{message} ({diagnostic})'
        super().__init__(message)


class WellPosednessError(ReconError):
    """Pure Neumann data violate the compatibility condition."""


class InverseCrimeError(ReconError):
    """Synthetic data would be generated on (almost) the inversion mesh."""
