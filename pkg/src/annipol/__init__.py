"""Monte Carlo toolkit for Compton polarimetry of annihilation photon pairs."""

from annipol.errors import AnnipolError, ConfigError, DomainError, FitError, MixingError

__version__ = "0.1.0"

__all__ = ["AnnipolError", "ConfigError", "DomainError", "FitError", "MixingError", "__version__"]
