"""Exact two-way partial AUC optimization with stochastic primal-dual
double block-coordinate methods (STACO1 for convex scorers, STACO2 for
weakly convex ones)."""
from .core import (PrimalDualState, RateParams, StageAnchor, StepSizes, SurrogateLoss,
                   TPAUCProblem, exact_objective_eq1, partial_min_eq2)
from .data import Dataset, load_libsvm, parse_libsvm, synth_gaussian
from .kernels import BACKEND
from .scorers import LinearScorer, MlpScorer

__version__ = "0.1.0"
