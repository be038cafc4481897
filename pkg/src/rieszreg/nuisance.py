"""Stagewise conditional-expectation fits.

The innermost stage regresses the outcome on its conditioning set; every
outer stage regresses a pseudo-outcome, namely the previous stage's mapped
prediction, on its own conditioning set. Binary outcomes default to a
logistic sieve (damped Newton on the penalized log-likelihood); everything
else, pseudo-outcomes included, uses penalized least squares over the same
feature dictionaries as the Riesz fits, which keeps the residual
orthogonality identities between the two exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._linalg import default_ridge, solve_normal_equations
from .basis import Basis, make_basis
from .data import Dataset
from .errors import NonConvergenceError, SchemaError
from .estimands import EstimandSpec, FunctionalMap, apply_map

LOGISTIC_TOL = 1e-9
LOGISTIC_MAX_ITER = 100


@dataclass
class NuisanceFit:
    """One fitted stage regression, evaluable on any schema-conformant rows."""

    stage: int
    family: str  # "least_squares" or "logistic"
    basis: Basis
    coef: np.ndarray
    ridge: float
    gram_condition: float
    newton_iterations: int = 0

    def __call__(self, cols) -> np.ndarray:
        index = self.basis.design(cols) @ self.coef
        return expit(index) if self.family == "logistic" else index

    def to_dict(self) -> dict:
        return {
            "kind": "nuisance",
            "stage": self.stage,
            "family": self.family,
            "features": self.basis.to_dict(),
            "coef": [float(c) for c in self.coef],
            "ridge": self.ridge,
            "gram_condition": self.gram_condition,
            "newton_iterations": self.newton_iterations,
        }

    @staticmethod
    def from_dict(d: dict) -> "NuisanceFit":
        return NuisanceFit(d["stage"], d["family"], Basis.from_dict(d["features"]),
                           np.asarray(d["coef"]), d["ridge"], d["gram_condition"],
                           d.get("newton_iterations", 0))


def fit_least_squares(basis: Basis, data, target: np.ndarray, ridge: float | None,
                      stage: int) -> NuisanceFit:
    design = basis.design(data.columns if isinstance(data, Dataset) else data)
    n = design.shape[0]
    gram = design.T @ design / n
    rhs = design.T @ np.asarray(target, dtype=np.float64) / n
    if ridge is None:
        ridge = default_ridge(gram)
    coef, condition = solve_normal_equations(gram, rhs, ridge, what="regression Gram matrix")
    return NuisanceFit(stage, "least_squares", basis, coef, float(ridge), condition)


def fit_logistic(basis: Basis, data, target: np.ndarray, ridge: float | None,
                 stage: int, tol: float = LOGISTIC_TOL,
                 max_iter: int = LOGISTIC_MAX_ITER) -> NuisanceFit:
    """Damped Newton on mean log-loss plus (ridge/2)*||coef||^2; converges
    when the largest gradient component falls below ``tol``."""
    target = np.asarray(target, dtype=np.float64)
    if not np.isin(target, (0.0, 1.0)).all():
        raise SchemaError("logistic fits require a 0/1 target")
    design = basis.design(data.columns if isinstance(data, Dataset) else data)
    n, dim = design.shape
    if ridge is None:
        ridge = default_ridge(design.T @ design / n)

    def objective(c):
        index = design @ c
        # log(1 + exp(index)) - y*index, computed without overflow
        return float(np.mean(np.logaddexp(0.0, index) - target * index)
                     + 0.5 * ridge * c @ c)

    coef = np.zeros(dim)
    value = objective(coef)
    condition = np.nan
    for iteration in range(1, max_iter + 1):
        probs = expit(design @ coef)
        grad = design.T @ (probs - target) / n + ridge * coef
        if np.max(np.abs(grad)) < tol:
            return NuisanceFit(stage, "logistic", basis, coef, float(ridge),
                               condition, newton_iterations=iteration - 1)
        hessian = (design * (probs * (1 - probs))[:, None]).T @ design / n
        step, condition = solve_normal_equations(hessian, grad, ridge,
                                                 what="logistic Hessian")
        scale = 1.0
        while scale > 1e-10:
            trial = coef - scale * step
            trial_value = objective(trial)
            if trial_value <= value:
                coef, value = trial, trial_value
                break
            scale /= 2.0
        else:
            break
    raise NonConvergenceError(
        f"logistic fit did not converge in {max_iter} iterations "
        f"(max gradient {np.max(np.abs(grad)):.3e}, tol {tol:g})")


def fit_stage(spec: EstimandSpec, k: int, data: Dataset, prev: NuisanceFit | None = None,
              basis: Basis | None = None, basis_policy: str = "default", degree: int = 2,
              ridge: float | None = None, family: str | None = None) -> NuisanceFit:
    """Fit the stage-k regression.

    For the innermost stage the target is the outcome column; for k < K it is
    the pseudo-outcome apply_map(stage k+1 map, prev, row), so ``prev`` must
    be the stage-(k+1) fit. Subgroup outer stages simply include their
    conditioning variables (e.g. the treatment) among the regression
    features, so the outer map's point evaluation is well defined.
    """
    stage = spec.stage(k)
    if basis is None:
        basis = make_basis(basis_policy, stage.given, data, degree)
    if k == spec.depth:
        outcome = data.outcome
        target = data.column(outcome.name)
        if family is None:
            family = "logistic" if outcome.support == "binary" else "least_squares"
    else:
        if prev is None:
            raise SchemaError(f"stage {k} needs the stage-{k + 1} fit to build its pseudo-outcome")
        target = predict_mapped(prev, spec.stage(k + 1).fmap, data)
        if family is None:
            family = "least_squares"
    if family == "logistic":
        return fit_logistic(basis, data, target, ridge, k)
    if family == "least_squares":
        return fit_least_squares(basis, data, target, ridge, k)
    raise SchemaError(f"unknown nuisance family {family!r}")


def fit_all_stages(spec: EstimandSpec, data: Dataset, basis_policy: str = "default",
                   degree: int = 2, ridge: float | None = None,
                   outcome_family: str | None = None) -> list[NuisanceFit]:
    """Fit Q_K down to Q_1; returns fits ordered outermost first."""
    if spec.is_contrast:
        raise SchemaError("instantiate contrast specs before fitting nuisances")
    fits: list = [None] * spec.depth
    prev = None
    for k in range(spec.depth, 0, -1):
        family = outcome_family if k == spec.depth else None
        prev = fit_stage(spec, k, data, prev=prev, basis_policy=basis_policy,
                         degree=degree, ridge=ridge, family=family)
        fits[k - 1] = prev
    return fits


def predict_mapped(fit, fmap: FunctionalMap, data) -> np.ndarray:
    """Row-wise application of a map to a fitted function."""
    return apply_map(fmap, fit, data)
