"""Amortized topic model with treatment and outcome heads.

A feedforward encoder maps a normalized bag-of-words to the mean and diagonal
scale of a Gaussian over unconstrained topic coordinates; softmax of a
reparameterized sample gives the document's topic proportions, which both
reconstruct the document through the topic-word matrix and feed a logit-linear
propensity head and per-arm linear outcome heads. Training jointly minimizes
the negative evidence lower bound plus the two supervision losses; the
unsupervised variant drops the supervision terms. Trained parameters are
immutable in practice and safe to share across prediction threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as T
from .corpus import BowCorpus
from .estimators import Nuisances
from .tensor import AdamState, Node, adam_step, sigmoid_values

CHECKPOINT_VERSION = 1

MODES = ("causal", "unsupervised", "supervised")


@dataclass(frozen=True)
class AtmConfig:
    """Training configuration; every field is overridable from the CLI."""

    n_topics: int = 32
    hidden: int = 128
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    mode: str = "causal"
    outcome_family: str = "continuous"
    binary_outcome_loss: str = "cross_entropy"  # or "squared_error"
    supervision_weight: float = 1.0
    sigma_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.outcome_family not in ("continuous", "binary"):
            raise ValueError(f"unknown outcome family {self.outcome_family!r}")
        if self.binary_outcome_loss not in ("cross_entropy", "squared_error"):
            raise ValueError(f"unknown binary outcome loss {self.binary_outcome_loss!r}")
        if self.n_topics < 2:
            raise ValueError("n_topics must be >= 2")


@dataclass
class AtmParams:
    """All trainable arrays: encoder weights, topic logits, and head weights."""

    w1: np.ndarray
    b1: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_ls: np.ndarray
    b_ls: np.ndarray
    beta_logits: np.ndarray
    gamma_g: np.ndarray
    gamma_q0: np.ndarray
    gamma_q1: np.ndarray

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def n_topics(self) -> int:
        return self.beta_logits.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.beta_logits.shape[1]


@dataclass(frozen=True)
class PosteriorParams:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError("mu and sigma shapes differ")
        if np.any(self.sigma <= 0.0):
            raise ValueError("nonpositive sigma")


def init_params(vocab_size: int, config: AtmConfig, rng: np.random.Generator) -> AtmParams:
    """Glorot-scaled encoder weights, small topic-logit noise, zeroed heads.

    Zero heads make the propensity start at 0.5 and the outcome heads at 0,
    and keep the causal objective with supervision weight 0 bit-identical to
    the unsupervised one (head gradients are exactly zero).
    """
    k, h, v = config.n_topics, config.hidden, vocab_size

    def glorot(n_in, n_out):
        return rng.normal(scale=np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))

    return AtmParams(
        w1=glorot(v, h),
        b1=np.zeros(h),
        w_mu=glorot(h, k),
        b_mu=np.zeros(k),
        w_ls=glorot(h, k),
        b_ls=np.zeros(k),
        beta_logits=0.01 * rng.normal(size=(k, v)),
        gamma_g=np.zeros(k + 1),
        gamma_q0=np.zeros(k + 1),
        gamma_q1=np.zeros(k + 1),
    )


def _normalize_rows(counts: np.ndarray) -> np.ndarray:
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def _encoder_nodes(x_norm: np.ndarray, lv: dict, sigma_floor: float):
    hidden = T.relu(T.affine(Node(x_norm), lv["w1"], lv["b1"]))
    mu = T.affine(hidden, lv["w_mu"], lv["b_mu"])
    log_sigma = T.affine(hidden, lv["w_ls"], lv["b_ls"])
    sigma = T.maximum_const(T.exp(log_sigma), sigma_floor)
    return mu, sigma


def loss_rows(counts, t, y, lv: dict, eps, config: AtmConfig) -> Node:
    """Per-document loss vector as a differentiable graph node.

    `lv` maps parameter names to leaf Nodes; `eps` is the pre-drawn
    reparameterization noise (ignored in supervised mode). All three loss
    terms share the same sampled topic proportions.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    x_norm = _normalize_rows(counts)
    mu, sigma = _encoder_nodes(x_norm, lv, config.sigma_floor)

    if config.mode == "supervised":
        theta = T.softmax_rows(mu)
    else:
        r = T.reparam_with_noise(mu, sigma, eps)
        theta = T.softmax_rows(r)

    total: Node | None = None
    if config.mode in ("causal", "unsupervised"):
        beta = T.softmax_rows(lv["beta_logits"])
        mix = T.matmul(theta, beta)
        recon = T.bow_loglik(mix, counts)
        kl = 0.5 * T.row_sum(T.square(mu) + T.square(sigma) - 2.0 * T.log(sigma) - 1.0)
        total = kl - recon  # negative evidence lower bound

    if config.mode in ("causal", "supervised"):
        t = np.asarray(t, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        g_logit = T.linear_head(theta, lv["gamma_g"])
        ce = T.bce_with_logits(g_logit, t)
        q0 = T.linear_head(theta, lv["gamma_q0"])
        q1 = T.linear_head(theta, lv["gamma_q1"])
        q_sel = T.add(T.mul(Node(t), q1), T.mul(Node(1.0 - t), q0))
        if config.outcome_family == "binary" and config.binary_outcome_loss == "cross_entropy":
            outcome = T.bce_with_logits(q_sel, y)
        else:
            outcome = T.squared_error(q_sel, y)
        supervision = config.supervision_weight * (ce + outcome)
        total = supervision if total is None else total + supervision
    return total


def loss_builder(counts, t, y, config: AtmConfig, eps):
    """Deterministic loss closure over fixed noise, for gradient checking."""

    def build(lv: dict) -> Node:
        return T.mean_all(loss_rows(counts, t, y, lv, eps, config))

    return build


def encode(bow, params: AtmParams, sigma_floor: float = 1e-6) -> PosteriorParams:
    """Posterior mean and scale for one count vector (or a batch of rows)."""
    counts = np.asarray(bow, dtype=np.float64)
    single = counts.ndim == 1
    lv = {name: Node(arr) for name, arr in params.as_dict().items()}
    mu, sigma = _encoder_nodes(_normalize_rows(counts), lv, sigma_floor)
    if single:
        return PosteriorParams(mu.values[0], sigma.values[0])
    return PosteriorParams(mu.values, sigma.values)


def kl_diag_normal(q: PosteriorParams) -> float:
    """KL between the diagonal Gaussian posterior and a standard normal prior.

    Computed on the unconstrained coordinates, where both distributions are
    Gaussian and the closed form 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)
    applies.
    """
    if np.any(q.sigma <= 0.0):
        raise ValueError("nonpositive sigma")
    per_dim = q.mu**2 + q.sigma**2 - 1.0 - 2.0 * np.log(q.sigma)
    return float(0.5 * per_dim.sum())


def reconstruction_loglik(bow, theta, beta) -> float:
    """Sum of count_v * log((theta @ beta)_v); empty documents give exactly 0."""
    counts = np.asarray(bow, dtype=np.float64)
    mix = np.asarray(theta, dtype=np.float64) @ np.asarray(beta, dtype=np.float64)
    counted = counts > 0
    if np.any(mix[counted] <= 0.0):
        raise ValueError("zero-probability token")
    return float((counts[counted] * np.log(mix[counted])).sum())


def elbo(bow, params: AtmParams, rng: np.random.Generator, sigma_floor: float = 1e-6) -> float:
    """One-sample evidence lower bound estimate for a single document."""
    counts = np.atleast_2d(np.asarray(bow, dtype=np.float64))
    q = encode(counts, params, sigma_floor)
    eps = rng.standard_normal(q.mu.shape)
    theta = _softmax(q.mu + q.sigma * eps)
    beta = topics(params)
    recon = reconstruction_loglik(counts[0], theta[0], beta)
    kl = kl_diag_normal(PosteriorParams(q.mu[0], q.sigma[0]))
    return recon - kl


def causal_loss(
    bow,
    t,
    y,
    params: AtmParams,
    rng: np.random.Generator,
    config: AtmConfig | None = None,
) -> float:
    """Single-document training loss: -elbo + treatment and outcome terms."""
    config = config or AtmConfig(n_topics=params.n_topics, mode="causal")
    if t not in (0, 1):
        raise ValueError("treatment must be 0 or 1")
    if y is None:
        raise ValueError("missing outcome")
    counts = np.atleast_2d(np.asarray(bow, dtype=np.float64))
    eps = rng.standard_normal((1, params.n_topics))
    lv = {name: Node(arr) for name, arr in params.as_dict().items()}
    rows = loss_rows(counts, np.array([float(t)]), np.array([float(y)]), lv, eps, config)
    return float(rows.values[0])


def topics(params: AtmParams) -> np.ndarray:
    """Row-softmax of the topic logits: one distribution over words per topic."""
    z = params.beta_logits - params.beta_logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def train(corpus, t=None, y=None, config: AtmConfig = AtmConfig()):
    """Minibatch-optimize the mean per-document loss; returns (params, trace).

    Deterministic given config.seed: initialization, batch order, and the
    reparameterization noise all come from one seeded generator. The trace
    holds the mean minibatch loss per epoch. Aborts on a non-finite loss.
    """
    counts = corpus.count_matrix() if isinstance(corpus, BowCorpus) else np.asarray(corpus, dtype=np.float64)
    n = counts.shape[0]
    if n == 0:
        raise ValueError("empty corpus")
    if config.mode in ("causal", "supervised"):
        if t is None or y is None:
            raise ValueError(f"mode={config.mode!r} requires treatment and outcome")
        t = np.asarray(t, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    params = init_params(counts.shape[1], config, rng)
    param_dict = params.as_dict()
    state = AdamState(lr=config.learning_rate)
    trace = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for b_idx, start in enumerate(range(0, n, config.batch_size)):
            batch = perm[start : start + config.batch_size]
            eps = None
            if config.mode != "supervised":
                eps = rng.standard_normal((batch.size, config.n_topics))
            lv = {name: Node(arr) for name, arr in param_dict.items()}
            t_b = t[batch] if t is not None else None
            y_b = y[batch] if y is not None else None
            loss = T.mean_all(loss_rows(counts[batch], t_b, y_b, lv, eps, config))
            if not np.isfinite(loss.values):
                raise ValueError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
            loss.backward()
            grads = {
                name: (lv[name].grad if lv[name].grad is not None else np.zeros_like(arr))
                for name, arr in param_dict.items()
            }
            adam_step(param_dict, grads, state)
            batch_losses.append(float(loss.values))
        trace.append(float(np.mean(batch_losses)))
    return params, trace


_PREDICT_NOISE_SEED = 20260115  # fixed so nuisance prediction is deterministic


def predict_nuisances(
    corpus,
    params,
    outcome_family: str = "continuous",
    folds=None,
    sigma_floor: float = 1e-6,
    embedding: str = "posterior_mode",
    mc_draws: int = 64,
) -> Nuisances:
    """Deterministic per-document nuisances from trained parameters.

    The default embedding is softmax(mu), with no sampling at prediction
    time. embedding="mc_average" instead averages the topic proportions over
    a fixed set of posterior draws (deterministic via a constant internal
    seed); that matches the sampled proportions the heads trained on but
    attenuates their slopes, which empirically costs more accuracy than the
    mode evaluation gains. With `folds`, `params` must be one AtmParams per
    fold and each document is predicted by the model that never saw its fold.
    """
    if embedding not in ("mc_average", "posterior_mode"):
        raise ValueError(f"unknown embedding {embedding!r}")
    counts = corpus.count_matrix() if isinstance(corpus, BowCorpus) else np.asarray(corpus, dtype=np.float64)
    ids = corpus.ids() if isinstance(corpus, BowCorpus) else tuple(str(i) for i in range(counts.shape[0]))
    n = counts.shape[0]
    if folds is None:
        if not isinstance(params, AtmParams):
            raise ValueError("without folds, params must be a single AtmParams")
        g, q0, q1 = _predict_arrays(counts, params, outcome_family, sigma_floor, embedding, mc_draws)
    else:
        folds = np.asarray(folds)
        n_folds = int(folds.max()) + 1
        if isinstance(params, AtmParams) or len(params) != n_folds:
            raise ValueError(f"need one AtmParams per fold ({n_folds})")
        g = np.empty(n)
        q0 = np.empty(n)
        q1 = np.empty(n)
        for f in range(n_folds):
            mask = folds == f
            g[mask], q0[mask], q1[mask] = _predict_arrays(
                counts[mask], params[f], outcome_family, sigma_floor, embedding, mc_draws
            )
    # sigmoid saturates to exactly 0/1 in float64 for |logit| > ~37; nudge
    # inside the open interval so downstream logit-based code stays finite
    g = np.clip(g, 1e-12, 1.0 - 1e-12)
    return Nuisances(g_hat=g, q0_hat=q0, q1_hat=q1, unit_ids=ids)


def predictive_theta(counts, params: AtmParams, sigma_floor: float = 1e-6, embedding: str = "posterior_mode", mc_draws: int = 64) -> np.ndarray:
    """Per-document topic proportions used at prediction time."""
    q = encode(counts, params, sigma_floor)
    mu = np.atleast_2d(q.mu)
    if embedding == "posterior_mode":
        return _softmax(mu)
    sigma = np.atleast_2d(q.sigma)
    rng = np.random.default_rng(_PREDICT_NOISE_SEED)
    theta = np.zeros_like(mu)
    for _ in range(mc_draws):
        theta += _softmax(mu + sigma * rng.standard_normal(mu.shape))
    return theta / mc_draws


def _predict_arrays(counts, params: AtmParams, outcome_family: str, sigma_floor: float, embedding: str, mc_draws: int):
    theta = predictive_theta(counts, params, sigma_floor, embedding, mc_draws)
    g = sigmoid_values(theta @ params.gamma_g[:-1] + params.gamma_g[-1])
    q0 = theta @ params.gamma_q0[:-1] + params.gamma_q0[-1]
    q1 = theta @ params.gamma_q1[:-1] + params.gamma_q1[-1]
    if outcome_family == "binary":
        q0 = sigmoid_values(q0)
        q1 = sigmoid_values(q1)
    return g, q0, q1


def train_crossfit(corpus, t, y, config: AtmConfig, folds) -> list:
    """Train one model per fold on that fold's complement, with derived seeds."""
    counts = corpus.count_matrix() if isinstance(corpus, BowCorpus) else np.asarray(corpus, dtype=np.float64)
    folds = np.asarray(folds)
    fold_params = []
    for f in range(int(folds.max()) + 1):
        train_mask = folds != f
        fold_cfg = replace(config, seed=_derive(config.seed, f))
        t_f = t[train_mask] if t is not None else None
        y_f = y[train_mask] if y is not None else None
        params, _ = train(counts[train_mask], t_f, y_f, fold_cfg)
        fold_params.append(params)
    return fold_params


def _derive(seed: int, *branch) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, branch)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: AtmParams, config: AtmConfig, vocab_digest: str) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": {f.name: getattr(config, f.name) for f in fields(config)},
        "vocab_hash": vocab_digest,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in params.as_dict().items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, expected_vocab_hash: str | None = None):
    """Load (params, config, vocab_hash); verifies version and, if given, the hash."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {version!r} not supported (expected {CHECKPOINT_VERSION})")
    if expected_vocab_hash is not None and payload["vocab_hash"] != expected_vocab_hash:
        raise ValueError("checkpoint vocabulary hash does not match this corpus")
    arrays = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
    params = AtmParams(**arrays)
    config = AtmConfig(**payload["config"])
    return params, config, payload["vocab_hash"]
