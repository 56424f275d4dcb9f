"""Finite-state controllers from recurrent policies for POMDPs and POMDP families."""

__version__ = "0.1.0"

from .errors import FscxError  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .model import Fsc, HmPomdp, Objective, Pomdp  # noqa: E402

__all__ = ["BACKEND", "Fsc", "FscxError", "HmPomdp", "Objective", "Pomdp", "__version__"]
