"""Exception types shared across the package."""


class AnnipolError(Exception):
    """Base class for all package errors."""


class DomainError(AnnipolError, ValueError):
    """An argument lies outside the domain of a formula."""


class ConfigError(AnnipolError, ValueError):
    """Invalid or inconsistent run configuration."""


class FitError(AnnipolError, RuntimeError):
    """The modulation fit cannot be performed (singular system, too few bins)."""


class MixingError(AnnipolError, ValueError):
    """Event mixing or acceptance correction received unusable input."""
