"""Influence-function assembly and cross-fit one-step estimation.

For a K-stage estimand with fitted stage weights a_k and regressions Q_k,
the per-row influence contributions are

    D_k = a_k * (m_{k+1}(x; Q_{k+1}) - Q_k(x))      for k = 2..K
    D_1 = a_1 * (m_2(x; Q_2) - theta)               (m_{K+1}(x; .) := y)

and their sum is the influence function. The one-step estimate solves
mean(influence) = 0 in theta, which is linear in theta. The outermost
weight is the constant 1 for marginal outer stages; for subgroup outer
stages the fitted weight is rescaled to unit in-fold mean (its population
mean is exactly 1, and a scalar frequency needs no cross-fitting), which
makes solving coincide with the classic plug-in-plus-correction form, so
both bookkeeping identities hold by construction:

    theta_hat - plug_in = mean(eif_values)          (eif_values at plug_in)
    mean(influence at theta_hat) = 0
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import __version__
from .data import Dataset
from .errors import DegenerateFoldError, NonFiniteEifError, RieszregError, SchemaError
from .estimands import EstimandSpec, apply_map, validate_binding
from .mlp import MlpConfig
from .nuisance import fit_all_stages
from .riesz import fit_sequential
from .simulate import substream


@dataclass(frozen=True)
class EstimatorSettings:
    """Knobs for one estimation run; defaults follow the house choices."""

    riesz_method: str = "sieve"       # "sieve" or "mlp"
    riesz_basis: str = "default"      # "default", "saturated", or "intercept"
    nuisance_basis: str = "default"
    degree: int = 2
    ridge: float | None = None        # None = scale-aware default, 0.0 = exact
    outcome_family: str | None = None  # None = logistic iff the outcome is binary
    mlp: MlpConfig | None = None
    clip: float | None = None         # optional |weight| bound, with a clip count
    min_rows_per_fold: int = 50
    level: float = 0.95

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "riesz_method", "riesz_basis", "nuisance_basis", "degree", "ridge",
            "outcome_family", "clip", "min_rows_per_fold", "level")}
        d["mlp"] = self.mlp.to_dict() if self.mlp is not None else None
        return d


@dataclass
class EifTerm:
    """Per-row stage-k influence contribution."""

    k: int
    values: np.ndarray


@dataclass
class ConfidenceInterval:
    lo: float
    hi: float
    level: float

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "level": self.level}

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass
class ContrastBlock:
    """Second arm of a contrast plus the differenced estimate."""

    other: "EstimateReport"
    difference: float
    std_error: float
    ci: ConfidenceInterval
    eif_values: np.ndarray

    def to_dict(self) -> dict:
        return {
            "other": self.other.to_dict(),
            "difference": self.difference,
            "std_error": self.std_error,
            "ci": self.ci.to_dict(),
            "eif_values": [float(v) for v in self.eif_values],
        }


@dataclass
class EstimateReport:
    name: str
    theta_hat: float
    plug_in: float
    eif_values: np.ndarray
    std_error: float
    ci: ConfidenceInterval
    n: int
    folds: int
    seed: int
    per_fold: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    contrast: ContrastBlock | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def headline(self) -> float:
        """The reported number: the contrast difference when present."""
        return self.contrast.difference if self.contrast is not None else self.theta_hat

    @property
    def headline_ci(self) -> ConfidenceInterval:
        return self.contrast.ci if self.contrast is not None else self.ci

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "theta_hat": self.theta_hat,
            "plug_in": self.plug_in,
            "std_error": self.std_error,
            "ci": self.ci.to_dict(),
            "n": self.n,
            "folds": self.folds,
            "seed": self.seed,
            "eif_values": [float(v) for v in self.eif_values],
            "per_fold": self.per_fold,
            "diagnostics": self.diagnostics,
            "contrast": self.contrast.to_dict() if self.contrast is not None else None,
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------------------
# Influence-function assembly
# ---------------------------------------------------------------------------

def assemble_eif(spec: EstimandSpec, alphas, nuisances, data: Dataset,
                 theta: float) -> list[EifTerm]:
    """Per-stage influence contributions at a given theta, outermost first.

    ``alphas`` and ``nuisances`` are the per-stage fitted weights and
    regressions (any callables over columns), ordered outermost first.
    """
    parts = _stage_values(spec, alphas, nuisances, data)
    terms = [EifTerm(1, parts.alpha1 * (parts.next_mapped - theta))]
    terms.extend(EifTerm(k, values) for k, values in parts.tail)
    for term in terms:
        _require_finite(term.values, term.k)
    return terms


@dataclass
class _StageValues:
    tail: list                 # [(k, D_k)] for k = 2..K
    alpha1: np.ndarray         # outermost weight per row
    next_mapped: np.ndarray    # m_2(x; Q_2), or y when K = 1
    plug_values: np.ndarray    # m_1(x; Q_1)
    clipped: int


def _stage_values(spec: EstimandSpec, alphas, nuisances, data: Dataset,
                  clip: float | None = None) -> _StageValues:
    depth = spec.depth
    if len(alphas) != depth or len(nuisances) != depth:
        raise SchemaError(
            f"stage-count mismatch: spec has {depth} stages, got {len(alphas)} "
            f"weights and {len(nuisances)} regressions")
    cols = data.columns
    outcome = data.column(data.outcome.name)

    clipped = 0
    alpha_values = []
    for fit in alphas:
        values = np.asarray(fit(cols), dtype=np.float64)
        if clip is not None:
            clipped += int(np.count_nonzero(np.abs(values) > clip))
            values = np.clip(values, -clip, clip)
        alpha_values.append(values)

    # mapped[k] = m_{k+1}(x; Q_{k+1}) for k = 1..K, with y at the boundary
    mapped = {depth: outcome}
    for k in range(1, depth):
        mapped[k] = apply_map(spec.stage(k + 1).fmap, nuisances[k], data)

    tail = []
    for k in range(2, depth + 1):
        q_k = np.asarray(nuisances[k - 1](cols), dtype=np.float64)
        # non-finite products are caught by the guard below, not warned about
        with np.errstate(invalid="ignore", over="ignore"):
            values = alpha_values[k - 1] * (mapped[k] - q_k)
        _require_finite(values, k)
        tail.append((k, values))

    plug_values = apply_map(spec.stage(1).fmap, nuisances[0], data)
    return _StageValues(tail, alpha_values[0], mapped[1], plug_values, clipped)


def _require_finite(values: np.ndarray, k: int) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NonFiniteEifError(
            f"influence term D_{k} is non-finite at row {row} "
            f"(value {values[row]!r}); check positivity and fitted weights")


# ---------------------------------------------------------------------------
# Cross-fit one-step estimation
# ---------------------------------------------------------------------------

def one_step_estimate(spec: EstimandSpec, data: Dataset,
                      settings: EstimatorSettings | None = None,
                      folds: int = 5, seed: int = 0) -> EstimateReport:
    """Cross-fit one-step estimate with influence-function inference.

    With folds >= 2, all weights and regressions are fit on out-of-fold rows
    and evaluated in-fold; folds=1 fits and evaluates in-sample (diagnostic
    mode). Contrast specs estimate both arms on the same fold assignment and
    report the difference with its own influence-based standard error.
    """
    settings = settings if settings is not None else EstimatorSettings()
    validate_binding(spec, data)
    fold_ids = _assign_folds(data.n, folds, seed, settings.min_rows_per_fold)

    if spec.is_contrast:
        hi, lo = spec.contrast
        report_hi = _estimate_concrete(spec.instantiate(hi), data, settings, fold_ids,
                                       folds, seed, f"{spec.name}[a'={hi:g}]")
        report_lo = _estimate_concrete(spec.instantiate(lo), data, settings, fold_ids,
                                       folds, seed, f"{spec.name}[a'={lo:g}]")
        eif_diff = report_hi.eif_values - report_lo.eif_values
        difference = report_hi.theta_hat - report_lo.theta_hat
        se = float(np.std(eif_diff, ddof=1) / np.sqrt(data.n))
        report = report_hi
        report.name = spec.name
        report.contrast = ContrastBlock(report_lo, difference, se,
                                        _interval(difference, se, settings.level),
                                        eif_diff)
    else:
        report = _estimate_concrete(spec, data, settings, fold_ids, folds, seed,
                                    spec.name)
    report.provenance = {
        "spec_sha256": spec.sha256(),
        "data_sha256": data.sha256(),
        "seed": seed,
        "folds": folds,
        "settings": settings.to_dict(),
        "package_version": __version__,
    }
    return report


def _estimate_concrete(spec: EstimandSpec, data: Dataset, settings: EstimatorSettings,
                       fold_ids: np.ndarray, folds: int, seed: int,
                       name: str) -> EstimateReport:
    n = data.n
    _check_fold_levels(spec, data, fold_ids, folds)

    tail_sum = np.zeros(n)
    alpha1 = np.zeros(n)
    next_mapped = np.zeros(n)
    plug_values = np.zeros(n)
    per_fold = []
    clipped = 0

    for v in range(folds):
        test_idx = np.flatnonzero(fold_ids == v)
        train_idx = np.flatnonzero(fold_ids != v) if folds > 1 else test_idx
        train = data.subset(train_idx)
        test = data.subset(test_idx)

        nuisances = fit_all_stages(
            spec, train, basis_policy=settings.nuisance_basis, degree=settings.degree,
            ridge=settings.ridge, outcome_family=settings.outcome_family)
        alphas = fit_sequential(
            spec, train, method=settings.riesz_method, basis_policy=settings.riesz_basis,
            degree=settings.degree, ridge=settings.ridge, mlp_config=settings.mlp)

        parts = _stage_values(spec, alphas, nuisances, test, clip=settings.clip)
        clipped += parts.clipped

        raw_mean = float(np.mean(parts.alpha1))
        if abs(raw_mean) < 1e-12:
            raise RieszregError(
                f"outermost weight averages to ~0 in fold {v}; cannot solve for the estimate")
        alpha1[test_idx] = parts.alpha1 / raw_mean
        tail_sum[test_idx] = sum(values for _, values in parts.tail) if parts.tail else 0.0
        next_mapped[test_idx] = parts.next_mapped
        plug_values[test_idx] = parts.plug_values
        per_fold.append({
            "fold": v,
            "n_eval": int(test_idx.size),
            "n_train": int(train.n),
            "plug_in": float(np.mean(parts.plug_values)),
            "alpha1_mean_raw": raw_mean,
            "riesz_fitted_loss": [getattr(a, "fitted_loss", None) for a in alphas],
        })

    plug_in = float(np.mean(plug_values))
    eif_values = tail_sum + alpha1 * (next_mapped - plug_in)
    _require_finite(eif_values, 1)
    theta_hat = plug_in + float(np.mean(eif_values))
    se = float(np.std(eif_values, ddof=1) / np.sqrt(n))
    return EstimateReport(
        name=name, theta_hat=theta_hat, plug_in=plug_in, eif_values=eif_values,
        std_error=se, ci=_interval(theta_hat, se, settings.level), n=n, folds=folds,
        seed=seed, per_fold=per_fold, diagnostics={"clipped_weights": clipped})


def _interval(center: float, se: float, level: float) -> ConfidenceInterval:
    z = float(norm.ppf(0.5 + level / 2.0))
    return ConfidenceInterval(center - z * se, center + z * se, level)


def _assign_folds(n: int, folds: int, seed: int, min_rows: int) -> np.ndarray:
    if folds < 1:
        raise SchemaError(f"fold count must be >= 1, got {folds}")
    if n // folds < min_rows:
        raise DegenerateFoldError(
            f"{folds} folds over {n} rows leaves fewer than {min_rows} rows per fold; "
            f"reduce folds or min_rows_per_fold")
    # substream 1 is reserved for fold assignment so splits stay independent
    # of data drawn under the same seed (sampling uses substream 0)
    order = substream(seed, 1).permutation(n)
    fold_ids = np.empty(n, dtype=np.int64)
    fold_ids[order] = np.arange(n) % folds
    return fold_ids


def _check_fold_levels(spec: EstimandSpec, data: Dataset, fold_ids: np.ndarray,
                       folds: int) -> None:
    """Every training set must contain every declared level of each discrete
    column that a map assigns; otherwise saturated fits are singular and
    point evaluations ill-defined."""
    assigned = set()
    for st in spec.stages:
        assigned |= st.fmap.assigned_vars()
    discrete = [data.column_def(name) for name in sorted(assigned)
                if data.column_def(name).is_discrete]
    for v in range(folds):
        train_mask = (fold_ids != v) if folds > 1 else (fold_ids == v)
        for col in discrete:
            present = np.unique(data.column(col.name)[train_mask])
            missing = [lv for lv in col.levels if lv not in present]
            if missing:
                raise DegenerateFoldError(
                    f"training data for fold {v} is missing level(s) {missing} of "
                    f"column {col.name!r}")


# ---------------------------------------------------------------------------
# Orthogonality diagnostics
# ---------------------------------------------------------------------------

@dataclass
class OrthogonalityRow:
    k: int
    mean: float
    shared_basis: bool
    within_tol: bool


def verify_orthogonality(spec: EstimandSpec, data: Dataset, alphas, nuisances,
                         tol: float = 1e-10) -> list[OrthogonalityRow]:
    """Report mean D_k for every k > 1.

    When the stage-k weight and regression share an unpenalized basis, the
    least-squares residual is empirically orthogonal to the weight's span,
    so the mean must vanish to numerical precision; rows record whether the
    shared-basis condition holds and whether the mean is within tolerance.
    Diagnostics only: never raises on a violation.
    """
    parts = _stage_values(spec, alphas, nuisances, data)
    rows = []
    for k, values in parts.tail:
        alpha_fit = alphas[k - 1]
        q_fit = nuisances[k - 1]
        shared = (
            getattr(alpha_fit, "kind", None) == "sieve"
            and hasattr(q_fit, "basis")
            and getattr(q_fit, "family", None) == "least_squares"
            and alpha_fit.basis == q_fit.basis
            and alpha_fit.ridge == 0.0
            and q_fit.ridge == 0.0
        )
        mean = float(np.mean(values))
        rows.append(OrthogonalityRow(k, mean, shared, abs(mean) <= tol))
    return rows
