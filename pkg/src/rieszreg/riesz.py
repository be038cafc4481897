"""Direct representer estimation by minimizing the empirical Riesz loss.

For a linear map m and candidate function f the loss is

    mean_i [ f(x_i)^2 - 2 * w_i * m(x_i; f) ]

whose population minimizer is the representer itself and whose minimum is
-E[representer^2]. Two fitters are provided: a closed-form linear sieve
(exact normal-equation minimizer over a feature dictionary, optionally
ridged) and a small ReLU network trained by Adam on backpropagated gradients
of the same loss. Nested estimands are handled sequentially: each stage's
fitted weight becomes the per-row weight in the next stage's loss, with the
outermost marginal stage pinned to the constant 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import mlp as mlp_net
from ._linalg import default_ridge, solve_normal_equations
from .basis import Basis, make_basis
from .data import Dataset
from .errors import SchemaError, TrainingDivergedError
from .estimands import EstimandSpec, FunctionalMap, apply_map, builtin_spec, term_columns
from .mlp import MlpConfig
from .simulate import substream


def riesz_loss(fn, fmap: FunctionalMap, data, weights=None) -> float:
    """Empirical Riesz loss of ``fn``; weights enter the map term only."""
    cols, n = _columns(data)
    weights = _check_weights(weights, n)
    observed = np.asarray(fn(cols), dtype=np.float64)
    mapped = apply_map(fmap, fn, data)
    return float(np.mean(observed ** 2) - 2.0 * np.mean(weights * mapped))


# ---------------------------------------------------------------------------
# Fitted representers
# ---------------------------------------------------------------------------

@dataclass
class SieveRieszFit:
    """Linear representer: coefficients over a feature basis."""

    basis: Basis
    coef: np.ndarray
    ridge: float
    fitted_loss: float
    gram_condition: float
    kind: str = "sieve"

    def __call__(self, cols) -> np.ndarray:
        return self.basis.design(cols) @ self.coef

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "features": self.basis.to_dict(),
            "coef": [float(c) for c in self.coef],
            "ridge": self.ridge,
            "fitted_loss": self.fitted_loss,
            "gram_condition": self.gram_condition,
        }

    @staticmethod
    def from_dict(d: dict) -> "SieveRieszFit":
        return SieveRieszFit(Basis.from_dict(d["features"]), np.asarray(d["coef"]),
                             d["ridge"], d["fitted_loss"], d["gram_condition"])


@dataclass
class MlpRieszFit:
    """Network representer: layer weights plus the training-loss curve."""

    columns: tuple[str, ...]
    params: list
    config: MlpConfig
    fitted_loss: float
    loss_curve: np.ndarray
    kind: str = "mlp"

    def __call__(self, cols) -> np.ndarray:
        return mlp_net.forward(self.params, _stack(cols, self.columns))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "columns": list(self.columns),
            "layers": [{"weights": w.tolist(), "bias": b.tolist()} for w, b in self.params],
            "config": self.config.to_dict(),
            "fitted_loss": self.fitted_loss,
            "loss_curve": [float(v) for v in self.loss_curve],
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpRieszFit":
        params = [(np.asarray(layer["weights"]), np.asarray(layer["bias"]))
                  for layer in d["layers"]]
        return MlpRieszFit(tuple(d["columns"]), params, MlpConfig(**d["config"]),
                           d["fitted_loss"], np.asarray(d["loss_curve"]))


@dataclass
class ClosedFormRieszFit:
    """A representer given by rule rather than fitted; e.g. the constant 1
    weight of a marginal outer stage, or an exact inverse-probability form."""

    rule: str
    fn: object
    kind: str = "closed_form"

    def __call__(self, cols) -> np.ndarray:
        return np.asarray(self.fn(cols), dtype=np.float64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rule": self.rule}


def constant_one_fit() -> ClosedFormRieszFit:
    return ClosedFormRieszFit(
        "constant_one", lambda cols: np.ones(len(next(iter(cols.values())))))


RieszFit = SieveRieszFit | MlpRieszFit | ClosedFormRieszFit


# ---------------------------------------------------------------------------
# Sieve fitting
# ---------------------------------------------------------------------------

def fit_sieve(fmap: FunctionalMap, data, basis: Basis, ridge: float | None = None,
              weights=None) -> SieveRieszFit:
    """Exact minimizer of the (weighted, ridged) empirical Riesz loss over
    the basis span: (G + ridge*I) coef = mean_i[w_i * m(x_i; features)].

    ridge=None applies the scale-aware default; pass 0.0 for the exact
    unpenalized solution (errors if the Gram matrix is singular).
    """
    cols, n = _columns(data)
    weights = _check_weights(weights, n)
    design = basis.design(cols)
    gram = design.T @ design / n
    rhs = _mapped_design(basis, fmap, data).T @ weights / n
    if ridge is None:
        ridge = default_ridge(gram)
    coef, condition = solve_normal_equations(gram, rhs, ridge, what="Riesz Gram matrix")
    loss = float(coef @ gram @ coef - 2.0 * coef @ rhs)
    return SieveRieszFit(basis, coef, float(ridge), loss, condition)


def _mapped_design(basis: Basis, fmap: FunctionalMap, data) -> np.ndarray:
    """Row-wise map of every basis feature: sum_t coef_t * design(x with
    term t's assignments applied). Shape (n, dim)."""
    cols, n = _columns(data)
    schema = data if isinstance(data, Dataset) else None
    out = np.zeros((n, basis.dim))
    for coef, overridden in term_columns(fmap, cols, n, schema):
        out += coef * basis.design(overridden)
    return out


def representation_residuals(fit: SieveRieszFit, fmap: FunctionalMap, data,
                             weights=None) -> np.ndarray:
    """First-order-condition residuals, one per basis feature:

        mean[fit * feature] + ridge * coef - mean[w * m(.; feature)]

    With ridge 0 these are the finite-sample representation-identity gaps
    over the basis span; near machine zero certifies the fit."""
    cols, n = _columns(data)
    weights = _check_weights(weights, n)
    design = fit.basis.design(cols)
    fitted = design @ fit.coef
    lhs = design.T @ fitted / n + fit.ridge * fit.coef
    rhs = _mapped_design(fit.basis, fmap, data).T @ weights / n
    return lhs - rhs


def map_bound_probe(fmap: FunctionalMap, basis: Basis, data, trials: int = 100,
                    seed: int = 0) -> float:
    """Empirical boundedness diagnostic: max |mean m(.; f)| over random
    basis-span functions f scaled to unit empirical L2 norm."""
    cols, n = _columns(data)
    design = basis.design(cols)
    gram = design.T @ design / n
    rhs = _mapped_design(basis, fmap, data).mean(axis=0)
    rng = substream(seed)
    worst = 0.0
    for _ in range(trials):
        direction = rng.standard_normal(basis.dim)
        norm = float(np.sqrt(direction @ gram @ direction))
        if norm == 0.0:
            continue
        worst = max(worst, abs(float(rhs @ direction)) / norm)
    return worst


# ---------------------------------------------------------------------------
# MLP fitting
# ---------------------------------------------------------------------------

def fit_mlp(fmap: FunctionalMap, data, config: MlpConfig, weights=None,
            columns=None) -> MlpRieszFit:
    """Minimize the same empirical loss by Adam on backpropagated gradients.

    ``columns`` fixes the network's input order (defaults to the map's free
    variables followed by its assigned variables). Training is deterministic
    given config.seed; the returned fit carries the full loss curve, with the
    final entry never above the initial one for epochs > 0 monitored by the
    divergence guard.
    """
    cols, n = _columns(data)
    weights = _check_weights(weights, n)
    if columns is None:
        assigned = [v for v in sorted(fmap.assigned_vars()) if v not in fmap.free_vars]
        columns = tuple(fmap.free_vars) + tuple(assigned)
    columns = tuple(columns)

    x_observed = _stack(cols, columns)
    schema = data if isinstance(data, Dataset) else None
    term_coefs = []
    term_inputs = []
    for coef, overridden in term_columns(fmap, cols, n, schema):
        term_coefs.append(coef)
        term_inputs.append(_stack(overridden, columns))
    stacked = np.vstack([x_observed] + term_inputs)

    rng = substream(config.seed)
    params = mlp_net.init_params(len(columns), config, rng)

    def full_loss(p) -> float:
        out = mlp_net.forward(p, stacked)
        return _assembled_loss(out, term_coefs, weights, n)

    state = mlp_net.AdamState(params)
    batch = config.batch_size
    curve = [] if batch is None else [full_loss(params)]
    for epoch in range(config.epochs):
        if batch is None:
            # the gradient pass yields the loss at the epoch's entry for free
            params, entry_loss = _gradient_step(params, stacked, term_coefs,
                                                weights, n, state, config)
            curve.append(entry_loss)
        else:
            order = rng.permutation(n)
            for start in range(0, n, batch):
                rows = order[start:start + batch]
                sub = np.vstack([x_observed[rows]] + [xt[rows] for xt in term_inputs])
                params, _ = _gradient_step(params, sub, term_coefs, weights[rows],
                                           len(rows), state, config)
            curve.append(full_loss(params))
        if not np.isfinite(curve[-1]):
            raise TrainingDivergedError(
                f"training loss became non-finite at epoch {epoch} (loss={curve[-1]!r})")
    final = full_loss(params) if batch is None else curve[-1]
    if not np.isfinite(final):
        raise TrainingDivergedError(
            f"training loss became non-finite after epoch {config.epochs} (loss={final!r})")
    if batch is None:
        curve.append(final)
    return MlpRieszFit(columns, params, config, final, np.asarray(curve))


def _assembled_loss(out: np.ndarray, term_coefs, weights, n: int) -> float:
    observed = out[:n]
    value = float(np.mean(observed ** 2))
    for t, coef in enumerate(term_coefs):
        block = out[(t + 1) * n:(t + 2) * n]
        value -= 2.0 * coef * float(np.mean(weights * block))
    return value


def _gradient_step(params, stacked, term_coefs, weights, n, state, config):
    # overflow here is the divergence signal, not a numerical accident to warn on
    with np.errstate(over="ignore", invalid="ignore"):
        out, cache = mlp_net.forward_cached(params, stacked)
    loss = _assembled_loss(out, term_coefs, weights, n)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"training loss became non-finite after {state.t} updates (loss={loss!r})")
    grad_out = np.empty_like(out)
    grad_out[:n] = 2.0 * out[:n] / n
    for t, coef in enumerate(term_coefs):
        grad_out[(t + 1) * n:(t + 2) * n] = -2.0 * coef * weights / n
    grads = mlp_net.backward(params, cache, grad_out)
    return state.step(params, grads, config), loss


def mlp_loss_gradients(fmap: FunctionalMap, data, config: MlpConfig, weights=None,
                       columns=None, step: float = 1e-5):
    """Analytic vs central-finite-difference loss gradients at the seeded
    initialization; returns (analytic, numeric) flat arrays."""
    cols, n = _columns(data)
    weights = _check_weights(weights, n)
    if columns is None:
        assigned = [v for v in sorted(fmap.assigned_vars()) if v not in fmap.free_vars]
        columns = tuple(fmap.free_vars) + tuple(assigned)
    columns = tuple(columns)
    x_observed = _stack(cols, columns)
    schema = data if isinstance(data, Dataset) else None
    term_coefs = []
    term_inputs = []
    for coef, overridden in term_columns(fmap, cols, n, schema):
        term_coefs.append(coef)
        term_inputs.append(_stack(overridden, columns))
    stacked = np.vstack([x_observed] + term_inputs)
    params = mlp_net.init_params(len(columns), config, substream(config.seed))

    out, cache = mlp_net.forward_cached(params, stacked)
    grad_out = np.empty_like(out)
    grad_out[:n] = 2.0 * out[:n] / n
    for t, coef in enumerate(term_coefs):
        grad_out[(t + 1) * n:(t + 2) * n] = -2.0 * coef * weights / n
    analytic = mlp_net.flatten(mlp_net.backward(params, cache, grad_out))

    def loss_of(p) -> float:
        return _assembled_loss(mlp_net.forward(p, stacked), term_coefs, weights, n)

    numeric = mlp_net.numeric_gradient(loss_of, params, step=step)
    return analytic, numeric


# ---------------------------------------------------------------------------
# Sequential fitting for nested estimands
# ---------------------------------------------------------------------------

def fit_sequential(spec: EstimandSpec, data: Dataset, method: str = "sieve",
                   basis_policy: str = "default", degree: int = 2,
                   ridge: float | None = None, mlp_config: MlpConfig | None = None,
                   stage_weights=None) -> list:
    """Fit one representer per stage, outermost first.

    Stage k's loss weights are the fitted stage k-1 values (ones at k=1);
    marginal outer stages take the constant-1 weight without fitting.
    ``stage_weights`` (a {k: array} mapping) overrides the weights fed into
    specific stages, which is useful for diagnostics.
    """
    if spec.is_contrast:
        raise SchemaError("instantiate contrast specs before fitting representers")
    if method not in ("sieve", "mlp"):
        raise SchemaError(f"unknown Riesz method {method!r}")
    if method == "mlp" and mlp_config is None:
        mlp_config = MlpConfig()
    fits: list = []
    weights = np.ones(data.n)
    for k in range(1, spec.depth + 1):
        stage = spec.stage(k)
        if stage_weights is not None and k in stage_weights:
            weights = np.asarray(stage_weights[k], dtype=np.float64)
        if not stage.given:
            fit = constant_one_fit()
        elif method == "sieve":
            basis = make_basis(basis_policy, stage.given, data, degree)
            fit = fit_sieve(stage.fmap, data, basis, ridge=ridge, weights=weights)
        else:
            stage_seed = int(np.random.SeedSequence(
                mlp_config.seed, spawn_key=(k,)).generate_state(1)[0])
            fit = fit_mlp(stage.fmap, data, replace(mlp_config, seed=stage_seed),
                          weights=weights, columns=stage.given)
        fits.append(fit)
        weights = np.asarray(fit(data.columns), dtype=np.float64)
    return fits


def fit_sequential_nde(data: Dataset, a_prime: float, method: str = "sieve",
                       **settings) -> tuple:
    """Sequentially fit the two mediation representers for one arm: first the
    control-conditioning weight over (A, W), then the mediator-shift weight
    over (A, M, W) using the first fit as per-row loss weights. Returns
    (stage-2 fit, stage-3 fit)."""
    spec = builtin_spec("nde").instantiate(a_prime)
    fits = fit_sequential(spec, data, method=method, **settings)
    return fits[1], fits[2]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _columns(data):
    if isinstance(data, Dataset):
        return data.columns, data.n
    cols = {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}
    n = len(next(iter(cols.values())))
    return cols, n


def _check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise SchemaError(f"weights have shape {weights.shape}, expected ({n},)")
    return weights


def _stack(cols, columns) -> np.ndarray:
    if not columns:
        n = len(next(iter(cols.values())))
        return np.empty((n, 0))
    return np.column_stack([np.asarray(cols[c], dtype=np.float64) for c in columns])
