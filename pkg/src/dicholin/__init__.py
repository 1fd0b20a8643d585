"""Generalized exponential dichotomies and nonautonomous linearization.

Build a linear cocycle, certify a (generalized) dichotomy on a window, then
compute the conjugacy ``H_n`` between ``x -> A_n x`` and
``x -> A_n x + f_n(x)`` together with its inverse and residual checks.
"""
from .cocycle import *  # noqa: F401,F403
from .conjugacy import *  # noqa: F401,F403
from .dichotomy import *  # noqa: F401,F403
from .examples import *  # noqa: F401,F403
from .holder import *  # noqa: F401,F403
from .linops import *  # noqa: F401,F403
from .perturbation import *  # noqa: F401,F403

__version__ = "0.1.0"
