"""Numerical checks of Poincare-constant stability for one-dimensional quotient diffusions."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .models import DiffusionSpec, build_model, catalog, check_assumptions  # noqa: F401
from .measure import QuotientMeasure, build_measure  # noqa: F401
