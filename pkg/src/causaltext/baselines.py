"""Reference representations and nuisance models.

Fixed document representations (bag-of-words, collapsed-Gibbs LDA topic
proportions, unsupervised topic-model embeddings) feed (logit-)linear
downstream regressions for the propensity and per-arm expected outcomes,
fit by full-batch gradient descent with an L2 penalty that excludes the
intercept. The supervised-only feedforward baseline reuses the topic-model
architecture with the reconstruction and prior terms removed. Oracle builders
expose the exact strata nuisances used by consistency checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import atm
from .corpus import BowCorpus
from .estimators import Nuisances
from .tensor import sigmoid_values


@dataclass(frozen=True)
class FeatureMatrix:
    """Fixed per-document representation; rows align with corpus order."""

    values: np.ndarray
    has_intercept: bool
    ids: tuple

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise ValueError("feature matrix rows must align with ids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix has non-finite entries")

    def design(self) -> np.ndarray:
        """Design matrix with an intercept column (appended if absent)."""
        if self.has_intercept:
            return self.values
        return np.hstack([self.values, np.ones((self.values.shape[0], 1))])


@dataclass
class LdaState:
    assignments: list
    n_dk: np.ndarray
    n_kt: np.ndarray
    n_k: np.ndarray
    alpha: float
    eta0: float


def _token_streams(corpus: BowCorpus) -> list:
    streams = []
    for doc in corpus.docs:
        toks = []
        for v in sorted(doc.counts):
            toks.extend([v] * doc.counts[v])
        streams.append(np.array(toks, dtype=np.int64))
    return streams


def lda_gibbs(
    corpus: BowCorpus,
    n_topics: int,
    alpha: float | None = None,
    eta0: float = 0.01,
    iterations: int = 500,
    burn_in: int = 250,
    seed: int = 0,
    state_out: list | None = None,
) -> np.ndarray:
    """Collapsed Gibbs sampling; returns [n_docs, n_topics] topic proportions.

    Proportions are smoothed doc-topic counts averaged over the post-burn-in
    sweeps, so every row lies on the simplex. Pass a list as `state_out` to
    receive the final LdaState (used by the count-consistency audit).
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    if iterations <= burn_in:
        raise ValueError("iterations must exceed burn_in")
    n = len(corpus)
    if n_topics == 1:
        return np.ones((n, 1))
    if alpha is None:
        alpha = 1.0 / n_topics
    v_size = corpus.vocab.size
    rng = np.random.default_rng(seed)
    streams = _token_streams(corpus)

    n_dk = np.zeros((n, n_topics))
    n_kt = np.zeros((n_topics, v_size))
    n_k = np.zeros(n_topics)
    assignments = []
    for d, toks in enumerate(streams):
        z = rng.integers(0, n_topics, size=toks.size)
        assignments.append(z)
        for tok, k in zip(toks, z):
            n_dk[d, k] += 1
            n_kt[k, tok] += 1
            n_k[k] += 1

    accum = np.zeros((n, n_topics))
    kept = 0
    for sweep in range(iterations):
        for d, toks in enumerate(streams):
            z = assignments[d]
            row = n_dk[d]
            for j in range(toks.size):
                tok = toks[j]
                k_old = z[j]
                row[k_old] -= 1
                n_kt[k_old, tok] -= 1
                n_k[k_old] -= 1
                probs = (row + alpha) * (n_kt[:, tok] + eta0) / (n_k + v_size * eta0)
                cdf = np.cumsum(probs)
                k_new = int(np.searchsorted(cdf, rng.uniform() * cdf[-1], side="right"))
                k_new = min(k_new, n_topics - 1)
                z[j] = k_new
                row[k_new] += 1
                n_kt[k_new, tok] += 1
                n_k[k_new] += 1
        if sweep >= burn_in:
            totals = n_dk.sum(axis=1, keepdims=True)
            accum += (n_dk + alpha) / (totals + n_topics * alpha)
            kept += 1
    if state_out is not None:
        state_out.append(LdaState(assignments, n_dk, n_kt, n_k, alpha, eta0))
    return accum / kept


def check_lda_counts(state: LdaState, corpus: BowCorpus) -> bool:
    """Audit: recompute the count tables from assignments and compare."""
    n_dk = np.zeros_like(state.n_dk)
    n_kt = np.zeros_like(state.n_kt)
    for d, (toks, z) in enumerate(zip(_token_streams(corpus), state.assignments)):
        for tok, k in zip(toks, z):
            n_dk[d, k] += 1
            n_kt[k, tok] += 1
    return (
        np.array_equal(n_dk, state.n_dk)
        and np.array_equal(n_kt, state.n_kt)
        and np.array_equal(n_kt.sum(axis=1), state.n_k)
    )


# ---------------------------------------------------------------------------
# Downstream regressions over fixed representations
# ---------------------------------------------------------------------------


def _power_lipschitz(X: np.ndarray, iters: int = 60) -> float:
    """Largest eigenvalue of X'X / n by power iteration."""
    n, d = X.shape
    v = np.ones(d) / np.sqrt(d)
    lam = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v) / n
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam = norm
        v = w / norm
    return lam


def _gd_fit(X, target, kind: str, l2: float, max_iter: int, tol: float, init=None):
    """Full-batch gradient descent on (logit-)linear least squares / logistic loss.

    The intercept (last column) is never penalized, so an infinitely shrunk
    logistic model still matches the overall treated fraction. Steps are
    per-coordinate 1 / (curvature + own penalty); the implied preconditioner
    dominates the Hessian, so the iteration is stable for any l2. Returns
    (weights, converged flag).
    """
    n, d = X.shape
    w = np.zeros(d) if init is None else np.array(init, dtype=np.float64)
    penalty_mask = np.ones(d)
    penalty_mask[-1] = 0.0
    curvature = 0.25 if kind == "logistic" else 1.0
    data_lip = max(curvature * _power_lipschitz(X), 1e-12)
    step = 1.0 / (data_lip + l2 * penalty_mask)
    converged = False
    for _ in range(max_iter):
        z = X @ w
        resid = sigmoid_values(z) - target if kind == "logistic" else z - target
        grad = X.T @ resid / n + l2 * penalty_mask * w
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        w -= step * grad
    return w, converged


def fit_downstream_nuisances(
    features: FeatureMatrix,
    t,
    y,
    outcome_family: str = "continuous",
    l2: float = 1e-4,
    folds=None,
    max_iter: int = 20000,
    tol: float = 1e-6,
) -> Nuisances:
    """Logistic propensity and per-arm outcome regressions over fixed features.

    With `folds`, every unit's prediction comes from models fit on the other
    folds. Non-convergence at the iteration cap is a warning, not an error;
    the partial fit is returned.
    """
    X = features.design()
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != t.size or t.size != y.size:
        raise ValueError("features, treatment, and outcome lengths differ")
    if np.all(t == t[0]):
        raise ValueError("degenerate treatment")
    q_kind = "logistic" if outcome_family == "binary" else "linear"

    n = t.size
    g = np.empty(n)
    q0 = np.empty(n)
    q1 = np.empty(n)
    if folds is None:
        fold_iter = [(np.arange(n), np.arange(n))]
    else:
        folds = np.asarray(folds)
        fold_iter = [
            (np.flatnonzero(folds != f), np.flatnonzero(folds == f))
            for f in range(int(folds.max()) + 1)
        ]
    for train_idx, predict_idx in fold_iter:
        Xtr = X[train_idx]
        t_tr = t[train_idx]
        y_tr = y[train_idx]
        if np.all(t_tr == t_tr[0]):
            raise ValueError("degenerate treatment in a training fold")
        w_g, ok_g = _gd_fit(Xtr, t_tr, "logistic", l2, max_iter, tol)
        w_q0, ok_q0 = _gd_fit(Xtr[t_tr == 0.0], y_tr[t_tr == 0.0], q_kind, l2, max_iter, tol)
        w_q1, ok_q1 = _gd_fit(Xtr[t_tr == 1.0], y_tr[t_tr == 1.0], q_kind, l2, max_iter, tol)
        if not (ok_g and ok_q0 and ok_q1):
            warnings.warn("downstream regression hit the iteration cap before converging")
        Xp = X[predict_idx]
        g[predict_idx] = sigmoid_values(Xp @ w_g)
        q0[predict_idx] = sigmoid_values(Xp @ w_q0) if q_kind == "logistic" else Xp @ w_q0
        q1[predict_idx] = sigmoid_values(Xp @ w_q1) if q_kind == "logistic" else Xp @ w_q1
    g = np.clip(g, 1e-12, 1.0 - 1e-12)
    return Nuisances(g_hat=g, q0_hat=q0, q1_hat=q1, unit_ids=tuple(features.ids))


def bow_features(corpus: BowCorpus, normalize: bool = True) -> FeatureMatrix:
    """Count (or count-normalized) matrix with an intercept column."""
    counts = corpus.count_matrix()
    if normalize:
        totals = counts.sum(axis=1, keepdims=True)
        counts = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    X = np.hstack([counts, np.ones((counts.shape[0], 1))])
    return FeatureMatrix(values=X, has_intercept=True, ids=corpus.ids())


def atm_features(corpus: BowCorpus, params, sigma_floor: float = 1e-6) -> FeatureMatrix:
    """Topic proportions from a trained (unsupervised) topic model."""
    theta = atm.predictive_theta(corpus.count_matrix(), params, sigma_floor)
    return FeatureMatrix(values=theta, has_intercept=False, ids=corpus.ids())


def topic_features(corpus: BowCorpus, proportions: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix(values=np.asarray(proportions, dtype=np.float64), has_intercept=False, ids=corpus.ids())


def one_hot_strata_features(strata, ids) -> FeatureMatrix:
    labels = sorted(set(strata))
    index = {s: i for i, s in enumerate(labels)}
    X = np.zeros((len(list(strata)), len(labels)))
    for i, s in enumerate(strata):
        X[i, index[s]] = 1.0
    return FeatureMatrix(values=X, has_intercept=False, ids=tuple(ids))


def propensity_feature(pi, ids) -> FeatureMatrix:
    X = np.asarray(pi, dtype=np.float64).reshape(-1, 1)
    return FeatureMatrix(values=X, has_intercept=False, ids=tuple(ids))


def write_features_csv(features: FeatureMatrix, path, column_prefix: str = "f") -> None:
    """Export one row per document: id first, then the feature values."""
    with open(path, "w", encoding="utf-8") as fh:
        header = ["id"] + [f"{column_prefix}{j}" for j in range(features.values.shape[1])]
        fh.write(",".join(header) + "\n")
        for doc_id, row in zip(features.ids, features.values):
            fh.write(doc_id + "," + ",".join(f"{v:.12g}" for v in row) + "\n")


def train_supervised_nn(corpus, t, y, config: atm.AtmConfig, folds=None) -> Nuisances:
    """Supervised-only feedforward baseline: topic-model architecture, heads only.

    The reconstruction and prior terms are dropped and softmax(mu) feeds the
    heads directly, so the objective is the causal loss minus its lower-bound
    term. With `folds`, nuisances are cross-fitted.
    """
    cfg = replace(config, mode="supervised")
    if folds is None:
        params, _ = atm.train(corpus, t, y, cfg)
        return atm.predict_nuisances(corpus, params, cfg.outcome_family)
    fold_params = atm.train_crossfit(corpus, t, y, cfg, folds)
    return atm.predict_nuisances(corpus, fold_params, cfg.outcome_family, folds=folds)


def strata_oracle_nuisances(strata, t, y, ids) -> Nuisances:
    """Exact within-stratum treated fractions and arm means as nuisances.

    Every stratum must contain both arms; a stratum with propensity exactly
    0 or 1 is nudged just inside (0, 1) with a warning so that validation
    passes and trimming can remove its units downstream.
    """
    strata = list(strata)
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g = np.empty(t.size)
    q0 = np.empty(t.size)
    q1 = np.empty(t.size)
    for label in sorted(set(strata)):
        mask = np.array([s == label for s in strata])
        t_s = t[mask]
        y_s = y[mask]
        pi = float(t_s.mean())
        if pi in (0.0, 1.0):
            warnings.warn(f"degenerate stratum {label!r}: clipping propensity inside (0, 1)")
            g[mask] = min(max(pi, 1e-9), 1.0 - 1e-9)
            q0[mask] = y_s[t_s == 0.0].mean() if (t_s == 0.0).any() else 0.0
            q1[mask] = y_s[t_s == 1.0].mean() if (t_s == 1.0).any() else 0.0
            continue
        g[mask] = pi
        q0[mask] = y_s[t_s == 0.0].mean()
        q1[mask] = y_s[t_s == 1.0].mean()
    return Nuisances(g_hat=g, q0_hat=q0, q1_hat=q1, unit_ids=tuple(ids))
