"""Shared normal-equation solver used by the Riesz and nuisance sieves."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import SingularGramError

CONDITION_WARN_THRESHOLD = 1e10


def default_ridge(gram: np.ndarray) -> float:
    """Scale-aware stabilizer: 1e-6 * trace(G) / dim(G)."""
    d = gram.shape[0]
    return 1e-6 * float(np.trace(gram)) / d


def solve_normal_equations(gram, rhs, ridge, what="Gram matrix"):
    """Solve (G + ridge*I) x = rhs via Cholesky, refusing singular systems.

    Applies one iterative-refinement step so first-order conditions hold to
    near machine precision. Returns (x, condition_number); warns when the
    regularized system is ill conditioned.
    """
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    regularized = gram + ridge * np.eye(gram.shape[0])
    try:
        factor = cho_factor(regularized)
    except LinAlgError:
        hint = "increase the ridge penalty or reduce the basis" if ridge == 0 \
            else "reduce the basis"
        raise SingularGramError(
            f"{what} is singular or indefinite (ridge={ridge!r}); {hint}") from None
    x = cho_solve(factor, rhs)
    x = x + cho_solve(factor, rhs - regularized @ x)
    condition = float(np.linalg.cond(regularized))
    if condition > CONDITION_WARN_THRESHOLD:
        warnings.warn(
            f"{what} condition number {condition:.3g} exceeds {CONDITION_WARN_THRESHOLD:.0e}; "
            f"solutions may be unreliable", RuntimeWarning, stacklevel=2)
    return x, condition
