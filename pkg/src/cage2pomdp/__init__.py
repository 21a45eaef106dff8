"""POMDP model of the CAGE-2 intrusion-response scenario with a
belief-filter PPO defender."""

from ._accel import NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "__version__"]
