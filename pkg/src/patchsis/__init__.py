"""Stochastic and deterministic SIS epidemics on a network of patches."""
from .errors import *  # noqa: F401,F403
from .model import (
    ContinuousState,
    DerivedMatrices,
    DiscreteState,
    Network,
    PatchParams,
    ValidatedModel,
    derive_matrices,
    is_irreducible,
    make_model,
    validate,
)

__version__ = "0.1.0"
