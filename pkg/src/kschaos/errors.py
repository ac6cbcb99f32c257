"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A run request is internally inconsistent or out of the supported envelope."""


class StabilityError(RuntimeError):
    """A field evolution produced NaNs, negativity beyond tolerance, or mass drift."""


class CouplingError(RuntimeError):
    """Particle and field timelines disagree beyond half a time step."""
