"""Independent oracles used by the tests.

Each function recomputes a quantity by a route disjoint from the library
implementation it checks: quadrature for marginal likelihoods, explicit
group-by loops for strata statistics, and closed-form linear algebra for
ridge regressions.
"""

import math

import numpy as np


def log_marginal_quadrature(counts, beta, n_nodes: int = 50) -> float:
    """Exact log marginal likelihood of one document under the topic model.

    Integrates p(w | softmax(r)^T beta) over r ~ N(0, I_2) with a tensorized
    Gauss-Hermite rule; only supports two topics, which is all the ELBO
    oracle tests need.
    """
    beta = np.asarray(beta, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if beta.shape[0] != 2:
        raise ValueError("quadrature oracle supports exactly 2 topics")
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    # substitute r = sqrt(2) * x so the e^{-x^2} weight becomes a N(0,1) density
    r_vals = math.sqrt(2.0) * nodes
    log_w = np.log(weights) - 0.5 * math.log(math.pi)

    log_terms = []
    for i in range(n_nodes):
        for j in range(n_nodes):
            r = np.array([r_vals[i], r_vals[j]])
            theta = np.exp(r - r.max())
            theta /= theta.sum()
            mix = theta @ beta
            ll = float((counts[counts > 0] * np.log(mix[counts > 0])).sum())
            log_terms.append(log_w[i] + log_w[j] + ll)
    log_terms = np.array(log_terms)
    m = log_terms.max()
    return float(m + np.log(np.exp(log_terms - m).sum()))


def strata_att(strata, t, y) -> float:
    """Brute-force treated-weighted strata contrast of exact arm means."""
    strata = list(strata)
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    n_treated = int((t == 1.0).sum())
    for label in set(strata):
        mask = np.array([s == label for s in strata])
        t_s, y_s = t[mask], y[mask]
        diff = y_s[t_s == 1.0].mean() - y_s[t_s == 0.0].mean()
        total += diff * (t_s == 1.0).sum()
    return total / n_treated


def ridge_closed_form(X, y, l2: float, penalize_last: bool = False) -> np.ndarray:
    """Least-squares ridge solution; by default the last (intercept) column
    is unpenalized, matching the gradient-descent fits."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = X.shape[1]
    penalty = np.eye(d)
    if not penalize_last:
        penalty[-1, -1] = 0.0
    return np.linalg.solve(X.T @ X / X.shape[0] + l2 * penalty, X.T @ y / X.shape[0])
