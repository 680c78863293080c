"""Bradley-Terry maximum likelihood with reference-free quasi-standard errors.

Abilities ``lam`` satisfy ``logit P(i beats j) = lam[i] - lam[j]`` and are
identified by ``mean(lam) == 0``.  Fitting uses the MM iteration of Hunter
(2004), which increases the likelihood monotonically.  A Newton step is
substituted whenever it reaches a higher likelihood than the MM step, so
ascent is kept while MM's slow crawl on widely spread abilities is avoided.

Quasi-variances follow Firth & de Menezes (2004): per-entity ``q`` such
that ``q[i] + q[j]`` approximates ``Var(lam[i] - lam[j])`` on the log scale.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from statistics import NormalDist

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import ScaledScores, WinTally
from .errors import DisconnectedGraph, Separation, SingularInformation, TooFewEntities

log = logging.getLogger(__name__)

Z95 = NormalDist().inv_cdf(0.975)


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 1000
    tolerance: float = 1e-10  # on max |delta lam| per iteration
    pseudocount: float = 0.0
    newton: bool = True  # also try a Newton step; keep it only if it beats the MM step
    debug: bool = False  # assert likelihood ascent on every iteration

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.pseudocount < 0:
            raise ValueError("pseudocount must be >= 0")


@dataclass(frozen=True)
class QuasiVariances:
    qv: np.ndarray
    max_rel_error: float  # max over pairs of |q_i + q_j - v_ij| / v_ij
    objective: float
    iterations: int


def log_likelihood(wins: np.ndarray, lam: np.ndarray) -> float:
    lam = np.asarray(lam, dtype=float)
    log_p = lam[:, None] - np.logaddexp(lam[:, None], lam[None, :])
    mask = wins > 0
    return float(np.sum(wins[mask] * log_p[mask]))


def _components(adjacency: np.ndarray, strong: bool) -> tuple[int, np.ndarray]:
    # sparse input avoids csgraph's slow dense validation path
    return connected_components(
        csr_matrix(adjacency.astype(np.int8)), directed=strong,
        connection="strong" if strong else "weak",
    )


def _complete(adjacency: np.ndarray) -> bool:
    return bool((adjacency | np.eye(len(adjacency), dtype=bool)).all())


def check_connected(tally: WinTally) -> None:
    compared = tally.comparisons > 0
    if _complete(compared):
        return
    k, labels = _components(compared, strong=False)
    if k > 1:
        groups = [[tally.entities[i] for i in np.flatnonzero(labels == c)] for c in range(k)]
        raise DisconnectedGraph(groups)


def check_separation(tally: WinTally) -> None:
    """Raise Separation unless the "beats" digraph is strongly connected.

    The Bradley-Terry MLE is finite iff for every partition of the entities
    some member of each side has beaten some member of the other (Ford, 1957).
    """
    beats = tally.wins > 0
    # every compared pair won both ways: strong and weak connectivity coincide
    if _complete(beats):
        return
    k, labels = _components(beats, strong=True)
    if k == 1:
        return
    never_lost, never_won = [], []
    for c in range(k):
        inside = labels == c
        lost_to_outside = beats[np.ix_(~inside, inside)].any()
        beat_outside = beats[np.ix_(inside, ~inside)].any()
        names = [tally.entities[i] for i in np.flatnonzero(inside)]
        if not lost_to_outside:
            never_lost.extend(names)
        if not beat_outside:
            never_won.extend(names)
    detail = []
    if never_lost:
        detail.append("never lost to the rest: " + ", ".join(never_lost))
    if never_won:
        detail.append("never beat the rest: " + ", ".join(never_won))
    raise Separation(never_lost + never_won, "; ".join(detail))


def _regularized(tally: WinTally, pseudocount: float) -> WinTally:
    if pseudocount == 0:
        return tally
    compared = tally.comparisons > 0
    return replace(tally, wins=tally.wins + pseudocount * compared)


def fit_bt(tally: WinTally, config: FitConfig | None = None) -> ScaledScores:
    """Fit abilities by maximum likelihood; quasi-SEs and 95% CIs included.

    Raises DisconnectedGraph or Separation before fitting.  Non-convergence
    is reported through ``converged=False`` together with a warning.
    """
    config = config or FitConfig()
    if tally.n < 2:
        raise TooFewEntities("Bradley-Terry fit needs at least two entities")
    check_connected(tally)
    tally = _regularized(tally, config.pseudocount)
    check_separation(tally)

    wins = tally.wins
    n_cmp = tally.comparisons
    total_wins = wins.sum(axis=1)

    lam = np.zeros(tally.n)
    ll = log_likelihood(wins, lam)
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        p = np.exp(lam - lam.max())
        denom = (n_cmp / (p[:, None] + p[None, :])).sum(axis=1)
        new = np.log(total_wins) - np.log(denom)
        new -= new.mean()
        ll_new = log_likelihood(wins, new)
        if config.newton:
            trial = _newton_step(tally, lam)
            if trial is not None:
                ll_trial = log_likelihood(wins, trial)
                if ll_trial > ll_new:
                    new, ll_new = trial, ll_trial
        step = float(np.max(np.abs(new - lam)))
        if config.debug:
            assert ll_new >= ll - 1e-9 * max(1.0, abs(ll)), (
                f"likelihood decreased at iteration {iterations}: {ll} -> {ll_new}"
            )
        lam, ll = new, ll_new
        if step < config.tolerance:
            converged = True
            break
    lam = lam - lam.mean()
    if not converged:
        warnings.warn(
            f"Bradley-Terry MM did not converge in {config.max_iterations} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    log.debug("MM finished after %d iterations (converged=%s)", iterations, converged)

    se = np.sqrt(quasi_variances(contrast_covariance(tally, lam)).qv)
    half = Z95 * se
    return ScaledScores(
        tally.entities,
        lam,
        quasi_se=se,
        ci_low=lam - half,
        ci_high=lam + half,
        converged=converged,
        iterations=iterations,
        log_likelihood=log_likelihood(wins, lam),
    )


def _newton_step(tally: WinTally, lam: np.ndarray) -> np.ndarray | None:
    wins = tally.wins
    p = 1.0 / (1.0 + np.exp(-(lam[:, None] - lam[None, :])))
    grad = wins.sum(axis=1) - (tally.comparisons * p).sum(axis=1)
    info = information_matrix(tally, lam)
    n = tally.n
    try:
        # adding the all-ones projector makes the Laplacian invertible; the
        # solution then lies in the sum-zero subspace
        delta = np.linalg.solve(info + np.ones((n, n)) / n, grad)
    except np.linalg.LinAlgError:
        return None
    out = lam + delta
    return out - out.mean() if np.all(np.isfinite(out)) else None


def information_matrix(tally: WinTally, lam: np.ndarray) -> np.ndarray:
    """Observed Fisher information of the abilities (a weighted graph Laplacian)."""
    lam = np.asarray(lam, dtype=float)
    p = 1.0 / (1.0 + np.exp(-(lam[:, None] - lam[None, :])))
    weight = tally.comparisons * p * (1.0 - p)
    np.fill_diagonal(weight, 0.0)
    return np.diag(weight.sum(axis=1)) - weight


def contrast_covariance(tally: WinTally, lam: np.ndarray) -> np.ndarray:
    """Covariance of the mean-zero abilities: the pseudo-inverse of the information.

    Raises SingularInformation if the information has rank below ``n - 1``.
    """
    info = information_matrix(tally, lam)
    evals, evecs = np.linalg.eigh(info)
    n = len(evals)
    # eigh sorts ascending; evals[0] is the null direction (constant vector)
    if n < 2 or evals[1] <= 1e-12 * max(evals[-1], 1e-300):
        raise SingularInformation(
            "Fisher information is singular on the sum-zero subspace"
        )
    inv = np.zeros(n)
    inv[1:] = 1.0 / evals[1:]
    return (evecs * inv) @ evecs.T


def contrast_variances(cov: np.ndarray) -> np.ndarray:
    d = np.diag(cov)
    return d[:, None] + d[None, :] - 2.0 * cov


def quasi_variances(cov: np.ndarray, tol: float = 1e-10, max_iter: int = 500) -> QuasiVariances:
    """Minimize sum over pairs of (log(q_i + q_j) - log v_ij)**2 over q > 0.

    Levenberg-Marquardt on ``log q``.
    """
    v = contrast_variances(np.asarray(cov, dtype=float))
    n = v.shape[0]
    if n == 2:
        if not 0 < v[0, 1] < np.inf:
            raise SingularInformation("non-positive contrast variance")
        return QuasiVariances(np.full(2, v[0, 1] / 2.0), 0.0, 0.0, 0)
    iu, ju = np.triu_indices(n, k=1)
    target = v[iu, ju]
    if np.any(target <= 0) or not np.all(np.isfinite(target)):
        raise SingularInformation("non-positive contrast variance")
    log_target = np.log(target)

    def residuals(theta: np.ndarray) -> np.ndarray:
        return np.logaddexp(theta[iu], theta[ju]) - log_target

    # symmetric start: half the average contrast variance involving each entity
    theta = np.log(np.array([v[i, np.arange(n) != i].mean() / 2.0 for i in range(n)]))
    r = residuals(theta)
    f = float(r @ r)
    mu = 1e-3
    rows = np.arange(len(iu))
    it = 0
    for it in range(1, max_iter + 1):
        q = np.exp(theta)
        s = q[iu] + q[ju]
        jac = np.zeros((len(iu), n))
        jac[rows, iu] = q[iu] / s
        jac[rows, ju] = q[ju] / s
        grad = jac.T @ r
        jtj = jac.T @ jac
        if np.max(np.abs(grad)) < 1e-15:
            break
        accepted = False
        while mu < 1e12:
            a = jtj + mu * np.diag(np.diag(jtj))
            step = np.linalg.solve(a, -grad)
            r_new = residuals(theta + step)
            f_new = float(r_new @ r_new)
            if f_new <= f:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        theta = theta + step
        df = f - f_new
        r, f = r_new, f_new
        mu = max(mu / 10.0, 1e-12)
        if np.max(np.abs(step)) < tol or df <= tol * max(f, 1e-300):
            break

    qv = np.exp(theta)
    rel = np.abs(qv[iu] + qv[ju] - target) / target
    return QuasiVariances(qv, float(rel.max()), f, it)


def quasi_se(tally: WinTally, scores: ScaledScores) -> np.ndarray:
    """Quasi-standard errors ``sqrt(q)`` for fitted ``scores`` on ``tally``."""
    if not scores.converged:
        warnings.warn("quasi-SEs computed from a non-converged fit", RuntimeWarning, stacklevel=2)
    if tuple(scores.entities) != tuple(tally.entities):
        tally = tally.subset(scores.entities)
    cov = contrast_covariance(tally, scores.lam)
    return np.sqrt(quasi_variances(cov).qv)


def confidence_intervals(scores: ScaledScores, level: float = 0.95) -> ScaledScores:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = Z95 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2.0)
    half = z * scores.quasi_se
    return replace(scores, ci_low=scores.lam - half, ci_high=scores.lam + half)
