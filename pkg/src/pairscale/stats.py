"""Validation statistics: Pearson correlation and logistic regression (IRLS, Wald)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import Entity, RegressionResult
from .errors import (
    ConstantVector,
    DegenerateOutcome,
    LengthMismatch,
    MissingCovariate,
    NotConverged,
    Separation,
    ValidationError,
)

INTERCEPT = "Constant"


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"vectors differ in shape: {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise LengthMismatch("pearson needs at least 3 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ConstantVector("pearson is undefined for a constant vector")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Design with a leading intercept column; ``predictor_names`` excludes it."""

    predictor_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        names = tuple(self.predictor_names)
        n = len(y)
        if X.ndim != 2 or X.shape != (n, len(names) + 1):
            raise ValidationError(f"X shape {X.shape} inconsistent with {len(names)} predictors, n={n}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValidationError("design has missing or non-finite entries")
        if not np.all(X[:, 0] == 1.0):
            raise ValidationError("first column of X must be the intercept (ones)")
        for k, name in enumerate(names, 1):
            if np.ptp(X[:, k]) == 0:
                raise ConstantVector(f"predictor {name!r} has zero variance")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("outcome must be binary 0/1")
        if n <= len(names) + 1:
            raise ValidationError(f"need more than {len(names) + 1} observations, got {n}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "predictor_names", names)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_columns(
        cls, columns: Mapping[str, Sequence[float]], y: Sequence[float]
    ) -> DesignMatrix:
        names = tuple(columns)
        y = np.asarray(y, dtype=float)
        X = np.column_stack([np.ones(len(y))] + [np.asarray(columns[c], dtype=float) for c in names])
        return cls(names, X, y)

    @property
    def all_names(self) -> tuple[str, ...]:
        return (INTERCEPT,) + self.predictor_names


def _log_lik(X: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = X @ beta
    # y*eta - log(1 + e^eta)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _expit(eta: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def check_separation(design: DesignMatrix) -> None:
    """Raise Separation if some nonzero direction b has sign(x_i b) agreeing with
    every outcome (complete or quasi-complete separation); found by an LP."""
    X, y = design.X, design.y
    s = 2.0 * y - 1.0
    A = X * s[:, None]
    # maximize sum(A b) subject to A b >= 0, |b| <= 1
    res = linprog(
        -A.sum(axis=0),
        A_ub=-A,
        b_ub=np.zeros(len(y)),
        bounds=[(-1.0, 1.0)] * X.shape[1],
        method="highs",
    )
    if res.status != 0 or -res.fun <= 1e-7 * max(1.0, np.abs(A).sum()):
        return
    b = res.x
    scale = np.r_[0.0, X[:, 1:].std(axis=0)]
    k = int(np.argmax(np.abs(b) * scale))
    names = design.all_names
    n_perfect = int(np.sum(A @ b > 1e-9))
    raise Separation(
        [names[k]],
        f"a combination of predictors perfectly predicts {n_perfect} of {len(y)} outcomes",
    )


def logistic_fit(
    design: DesignMatrix,
    tol: float = 1e-10,
    max_iter: int = 100,
    debug: bool = False,
) -> RegressionResult:
    """Maximum-likelihood logit by IRLS (Newton with step-halving).

    Stops when the max-norm of the score vector drops below ``tol``.  Standard
    errors come from the inverse observed information at the optimum; p-values
    are two-sided normal tail probabilities.
    """
    X, y = design.X, design.y
    if y.min() == y.max():
        raise DegenerateOutcome(f"outcome is constant ({int(y[0])}) for all {len(y)} observations")
    check_separation(design)

    beta = np.zeros(X.shape[1])
    # intercept start at the marginal log-odds
    beta[0] = math.log(y.mean() / (1.0 - y.mean()))
    ll = _log_lik(X, y, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = _expit(X @ beta)
        grad = X.T @ (y - p)
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        info = X.T @ (X * (p * (1.0 - p))[:, None])
        step = np.linalg.solve(info, grad)
        # near the optimum the likelihood is flat to rounding; allow that much slack
        slack = 1e-12 * max(1.0, abs(ll))
        t = 1.0
        while True:
            trial = beta + t * step
            ll_trial = _log_lik(X, y, trial)
            if ll_trial >= ll - slack or t < 1e-10:
                break
            t /= 2.0
        if debug:
            assert ll_trial >= ll - slack, f"IRLS log-likelihood decreased at iteration {it}"
        if ll_trial < ll - slack:
            break
        beta, ll = trial, ll_trial
    if not converged:
        raise NotConverged(f"IRLS did not reach score tolerance {tol} in {max_iter} iterations")

    p = _expit(X @ beta)
    info = X.T @ (X * (p * (1.0 - p))[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    z = beta / se
    pval = np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in z])
    return RegressionResult(
        design.all_names, beta, se, z, pval, len(y), True, ll, it
    )


# -- model specifications ----------------------------------------------------


@dataclass(frozen=True)
class Term:
    label: str
    source: str  # a score role ("aips", "kips") or a roster-derived column


@dataclass(frozen=True)
class RegressionSpec:
    name: str
    title: str
    terms: tuple[Term, ...]

    @property
    def predictor_names(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    @property
    def score_roles(self) -> tuple[str, ...]:
        return tuple(t.source for t in self.terms if t.source in SCORE_ROLES)


SCORE_ROLES = ("aips", "kips")
LOG_BUDGET = Term("log(Annual Budget)", "log_budget")
LOG_STAFF = Term("log(Total Staff)", "log_staff")
CONTROLS = (LOG_BUDGET, LOG_STAFF)
KIPS = Term("Knowledge Institution Pairwise Scores", "kips")


def model_specs() -> list[RegressionSpec]:
    """Replication designs; every design regresses the layoff indicator."""
    return [
        RegressionSpec("table2", "AIPS with budget and staff controls",
                       (Term("Ideology", "aips"),) + CONTROLS),
        RegressionSpec("model1", "KIPS with controls", (KIPS,) + CONTROLS),
        RegressionSpec("model2", "KIPS and AIPS with controls",
                       (KIPS, Term("Agency Ideology Pairwise Scores", "aips")) + CONTROLS),
        RegressionSpec("model3", "KIPS and perceived agency ideology with controls",
                       (KIPS, Term("Perceived Agency Ideology", "external_score")) + CONTROLS),
    ]


def get_spec(name: str) -> RegressionSpec:
    for spec in model_specs():
        if spec.name == name:
            return spec
    raise ValidationError(f"unknown model spec {name!r}")


def _covariate(entity: Entity, field: str) -> float:
    value = entity.covariates.get(field)
    if value is None:
        raise MissingCovariate(entity.id, field)
    return float(value)


def build_design(
    spec: RegressionSpec,
    entities: Sequence[Entity],
    scores: Mapping[str, Mapping[str, float]],
) -> DesignMatrix:
    """Assemble the design for ``spec`` over every roster entity.

    ``scores`` maps a role ("aips", "kips") to ``{entity id: lambda}``.
    Natural logs are used for the budget and staff controls.
    """
    columns: dict[str, list[float]] = {t.label: [] for t in spec.terms}
    y = []
    for e in entities:
        for t in spec.terms:
            if t.source in SCORE_ROLES:
                role_scores = scores.get(t.source)
                if role_scores is None:
                    raise MissingCovariate(e.id, t.source)
                if e.id not in role_scores:
                    raise MissingCovariate(e.id, t.source)
                value = float(role_scores[e.id])
            elif t.source == "log_budget":
                value = math.log(_covariate(e, "annual_budget"))
            elif t.source == "log_staff":
                value = math.log(_covariate(e, "total_staff"))
            else:
                value = _covariate(e, t.source)
            columns[t.label].append(value)
        y.append(_covariate(e, "layoff"))
    return DesignMatrix.from_columns(columns, y)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
