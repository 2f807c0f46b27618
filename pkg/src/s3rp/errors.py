"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, StabilityError / NumericError -> 4.
"""


class S3RPError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(S3RPError):
    """Invalid or inconsistent configuration."""


class DataError(S3RPError):
    """Malformed, missing, or non-finite data; failed I/O round-trips."""


class StabilityError(S3RPError):
    """A numerical stability condition (CFL, diffusion number) is violated."""


class NumericError(S3RPError):
    """Non-finite values produced where finite results are required."""


class ModelError(S3RPError):
    """Model misuse: shape mismatch, uninitialized state, mode mismatch."""


class EvalError(S3RPError):
    """Evaluation cannot proceed (missing ground truth or metadata)."""
