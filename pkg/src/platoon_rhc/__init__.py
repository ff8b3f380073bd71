"""Receding-horizon platoon formation for one CAV leading human-driven vehicles."""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CollisionDetected,
    ConfigError,
    InfeasibleHard,
    PlatoonError,
)

__all__ = ["__version__", "CollisionDetected", "ConfigError", "InfeasibleHard", "PlatoonError"]
