"""Generalized Bregman-surrogate algorithms for nonsmooth, nonconvex problems.

Submodules: ``gbf`` (generalized Bregman functions), ``thresholds``
(thresholding rules and induced penalties), ``losses``, ``solvers``
(surrogate iterations with error-term diagnostics), ``accel``
(momentum schemes), ``lp`` (dense simplex), ``experiments`` and ``cli``.
"""

__version__ = "0.1.0"

from .accel import AccelConfig, AccelProblem, run_accelerated, theta_update
from .errors import BregsurrError
from .gbf import DirectionalFunction, eval_gbf, gbf
from .losses import make_loss
from .lp import solve_simplex
from .solvers import (DcSvmProblem, GradientProblem, IterateTrace, LlaProblem,
                      MirrorProblem, QuantileTispProblem, RunConfig, SigmoidalProblem,
                      TispProblem, run)
from .thresholds import get_rule, quantile_threshold

__all__ = [
    "AccelConfig", "AccelProblem", "BregsurrError", "DcSvmProblem", "DirectionalFunction",
    "GradientProblem", "IterateTrace", "LlaProblem", "MirrorProblem", "QuantileTispProblem",
    "RunConfig", "SigmoidalProblem", "TispProblem", "eval_gbf", "gbf", "get_rule",
    "make_loss", "quantile_threshold", "run", "run_accelerated", "solve_simplex",
    "theta_update",
]
