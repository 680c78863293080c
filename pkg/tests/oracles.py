"""Independent reference computations, deliberately naive.

Nothing here imports the package's fitting code.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def bt_loglik_grid(W: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3-entity BT log-likelihood on the plane lam = (a, b, -a-b)."""
    lam = [a, b, -a - b]
    total = np.zeros(np.broadcast(a, b).shape)
    for i in range(3):
        for j in range(3):
            if i != j and W[i, j] > 0:
                total += W[i, j] * (lam[i] - np.logaddexp(lam[i], lam[j]))
    return total


def bt_grid_mle(W: np.ndarray, step: float = 1e-3, half_width: float = 4.0) -> np.ndarray:
    """Grid maximizer over the mean-zero plane, refined to ``step`` spacing.

    A coarse pass (step 0.02) locates the peak of the concave likelihood; a
    fine pass at ``step`` covers +-0.05 around it.
    """
    W = np.asarray(W, dtype=float)
    coarse = np.arange(-half_width, half_width + 1e-12, 0.02)
    A, B = np.meshgrid(coarse, coarse, indexing="ij")
    k = np.unravel_index(np.argmax(bt_loglik_grid(W, A, B)), A.shape)
    a0, b0 = coarse[k[0]], coarse[k[1]]
    fine = np.arange(-0.05, 0.05 + 1e-12, step)
    A, B = np.meshgrid(a0 + fine, b0 + fine, indexing="ij")
    k = np.unravel_index(np.argmax(bt_loglik_grid(W, A, B)), A.shape)
    a, b = A[k], B[k]
    return np.array([a, b, -a - b])


def quasi_variances_n3(v: np.ndarray) -> np.ndarray:
    """Exact solution of q_i + q_j = v_ij for three entities."""
    v01, v02, v12 = v[0, 1], v[0, 2], v[1, 2]
    return np.array([
        (v01 + v02 - v12) / 2.0,
        (v01 + v12 - v02) / 2.0,
        (v02 + v12 - v01) / 2.0,
    ])


def quasi_variances_bfgs(v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    iu, ju = np.triu_indices(n, 1)
    target = np.log(v[iu, ju])

    def obj(theta):
        q = np.exp(theta)
        r = np.log(q[iu] + q[ju]) - target
        return r @ r

    x0 = np.log(np.full(n, np.median(v[iu, ju]) / 2.0))
    res = minimize(obj, x0, method="BFGS", options={"gtol": 1e-12, "maxiter": 10_000})
    return np.exp(res.x)


def logistic_neg_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(np.log1p(np.exp(-np.abs(eta))) + np.maximum(eta, 0) - y * eta))


def logistic_nelder_mead(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative-free maximum likelihood; Nelder-Mead restarted until stable."""
    x = np.zeros(X.shape[1])
    for _ in range(6):
        res = minimize(
            logistic_neg_loglik, x, args=(X, y), method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 200_000, "maxfev": 200_000},
        )
        if np.max(np.abs(res.x - x)) < 1e-9:
            break
        x = res.x
    return res.x


def random_tallies_3(seed: int, count: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        W = rng.integers(1, 9, size=(3, 3)).astype(float)
        np.fill_diagonal(W, 0.0)
        out.append(W)
    return out


def random_logistic_designs(seed: int, count: int, n: int = 20) -> list[tuple[np.ndarray, np.ndarray]]:
    """Designs with an intercept and two continuous predictors; outcomes drawn
    from a moderate true model, skipping draws that are separated."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        X = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(1.0, 2.0, size=n)])
        beta = rng.normal(0, 0.7, size=3)
        y = (rng.random(n) < 1 / (1 + np.exp(-(X @ beta)))).astype(float)
        if 3 <= y.sum() <= n - 3:
            nm = logistic_nelder_mead(X, y)
            if np.max(np.abs(nm)) < 8:  # finite, well-separated-from-infinity optimum
                out.append((X, y))
    return out
