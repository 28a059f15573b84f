"""Semi-synthetic outcome simulation with known ground-truth effects.

Real (or generated) documents keep their text; treatment propensities come
from metadata strata, outcomes are simulated from treatment and the stratum
propensity with controlled confounding strength b1 and noise scale gamma, and
an exogeneity weight p mixes unrecoverable noise into the confounding. A
fully synthetic corpus generator provides closed-loop fixtures where the true
topics, strata, and propensities are all known.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import BowCorpus, BowDoc, Vocab
from .tensor import sigmoid_values


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the outcome simulation.

    b1 scales the confounding (how strongly the stratum propensity shifts the
    outcome), gamma is the noise standard deviation of the continuous family,
    p in [0, 1] is the exogeneity mixture weight (0 = confounding fully
    recoverable from text, 1 = fully exogenous).
    """

    b1: float
    gamma: float = 1.0
    family: str = "continuous"
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("continuous", "binary"):
            raise ValueError(f"unknown outcome family {self.family!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")


@dataclass(frozen=True)
class SimulatedDataset:
    treatment: np.ndarray
    outcome: np.ndarray
    pi_true: np.ndarray
    psi_true: float
    config: SimConfig


def strata_propensity(strata, t):
    """Treated fraction within each stratum; units inherit their stratum's value.

    Returns (per-stratum dict, per-unit array). A stratum whose propensity is
    exactly 0 or 1 breaks overlap; it is kept but warned about, and its units
    are left to downstream trimming.
    """
    t = np.asarray(t, dtype=np.float64)
    strata = list(strata)
    if len(strata) != t.size:
        raise ValueError("strata and treatment lengths differ")
    by_stratum: dict = {}
    for label, ti in zip(strata, t):
        by_stratum.setdefault(label, []).append(ti)
    pi_by_stratum = {label: float(np.mean(vals)) for label, vals in by_stratum.items()}
    for label, pi in pi_by_stratum.items():
        if pi in (0.0, 1.0):
            warnings.warn(f"degenerate stratum {label!r}: propensity {pi} breaks overlap")
    pi_unit = np.array([pi_by_stratum[label] for label in strata])
    return pi_by_stratum, pi_unit


def binary_outcome_probs(t, pi, b1):
    """P(Y=1) under the binary family: sigmoid(0.25*t + b1*(pi - 0.2))."""
    t = np.asarray(t, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    return sigmoid_values(0.25 * t + b1 * (pi - 0.2))


def simulate_outcome(t, pi, config: SimConfig) -> np.ndarray:
    """Draw outcomes given treatment and per-unit true propensity.

    Continuous family: y = t + b1*(pi - 0.5) + noise, noise ~ N(0, gamma^2)
    (gamma is a standard deviation). Binary family: Bernoulli at
    sigmoid(0.25*t + b1*(pi - 0.2)).
    """
    t = np.asarray(t, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if np.any((pi < 0) | (pi > 1)):
        raise ValueError("pi must lie in [0, 1]")
    rng = np.random.default_rng(config.seed)
    if config.family == "continuous":
        noise = rng.normal(scale=config.gamma, size=t.size)
        return t + config.b1 * (pi - 0.5) + noise
    probs = binary_outcome_probs(t, pi, config.b1)
    return (rng.uniform(size=t.size) < probs).astype(np.float64)


def ground_truth_effect(pi_treated, config: SimConfig) -> float:
    """Exact effect implied by the outcome model.

    Continuous family: the structural coefficient on treatment, exactly 1.
    Binary family: the plug-in expectation over treated units of
    sigmoid(0.25 + b1*(pi - 0.2)) - sigmoid(b1*(pi - 0.2)); computed exactly
    rather than by Monte Carlo so acceptance checks carry no simulation noise.
    """
    pi_treated = np.asarray(pi_treated, dtype=np.float64)
    if pi_treated.size == 0:
        raise ValueError("no treated units")
    if config.family == "continuous":
        return 1.0
    lift = sigmoid_values(0.25 + config.b1 * (pi_treated - 0.2))
    base = sigmoid_values(config.b1 * (pi_treated - 0.2))
    return float(np.mean(lift - base))


def mix_propensity_logits(g_hat, xi, p):
    """logit g_sim = (1 - p) * logit(g_hat) + p * xi, returned as a probability."""
    g_hat = np.asarray(g_hat, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if np.any((g_hat <= 0.0) | (g_hat >= 1.0)):
        raise ValueError("g_hat at 0 or 1 has infinite logit")
    logits = (1.0 - p) * np.log(g_hat / (1.0 - g_hat)) + p * xi
    return sigmoid_values(logits)


def simulate_exogenous_treatment(g_hat, p, seed):
    """Mix exogenous standard-normal noise into the propensity logits.

    Returns (g_sim, t_sim) with t_sim ~ Bernoulli(g_sim). p = 0 reproduces
    g_hat exactly; p = 1 makes the propensity independent of g_hat.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    g_hat = np.asarray(g_hat, dtype=np.float64)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(g_hat.size)
    g_sim = mix_propensity_logits(g_hat, xi, p)
    t_sim = (rng.uniform(size=g_hat.size) < g_sim).astype(np.float64)
    return g_sim, t_sim


def simulate_dataset(strata, t, config: SimConfig) -> SimulatedDataset:
    """Full protocol: strata propensities, optional exogeneity mix, outcomes, truth.

    With p = 0 the observed treatment is kept and confounding is the stratum
    propensity. With p > 0 the confounding becomes the mixed propensity g_sim
    and treatment is redrawn from it, so part of the confounding is
    unrecoverable from the text.
    """
    t = np.asarray(t, dtype=np.float64)
    _, pi = strata_propensity(strata, t)
    if config.p > 0.0:
        pi = np.clip(pi, 1e-6, 1.0 - 1e-6)
        g_sim, t_sim = simulate_exogenous_treatment(pi, config.p, seed=_derive(config.seed, 1))
        pi, t = g_sim, t_sim
    outcome_cfg = SimConfig(
        b1=config.b1, gamma=config.gamma, family=config.family, p=config.p, seed=_derive(config.seed, 2)
    )
    y = simulate_outcome(t, pi, outcome_cfg)
    if not np.any(t == 1.0):
        raise ValueError("no treated units after simulation")
    psi = ground_truth_effect(pi[t == 1.0], config)
    return SimulatedDataset(treatment=t, outcome=y, pi_true=pi, psi_true=psi, config=config)


def _derive(seed: int, *branch) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, branch)]).generate_state(1)[0])


def generate_synthetic_corpus(
    n_topics: int,
    vocab_size: int,
    n_docs: int,
    doc_length: int,
    sharpness: float,
    propensity_table,
    seed: int,
    topic_smoothing: float = 0.05,
) -> BowCorpus:
    """Closed-loop fixture: topic-mixture documents with known strata propensities.

    Each document draws topic proportions from a sharp symmetric Dirichlet
    (alpha = 1/sharpness, so larger sharpness concentrates mass on one topic),
    then doc_length tokens from the mixture over a block-diagonal topic-word
    matrix with `topic_smoothing` mass spread uniformly. The stratum is the
    argmax topic and treatment is Bernoulli at that stratum's propensity.
    """
    if n_topics < 1 or vocab_size < n_topics or n_docs < 1:
        raise ValueError("need n_topics >= 1, vocab_size >= n_topics, n_docs >= 1")
    propensity_table = np.asarray(propensity_table, dtype=np.float64)
    if propensity_table.size != n_topics:
        raise ValueError("propensity_table must have one entry per topic")
    rng = np.random.default_rng(seed)

    beta = np.full((n_topics, vocab_size), topic_smoothing / vocab_size)
    bounds = np.linspace(0, vocab_size, n_topics + 1).astype(int)
    for k in range(n_topics):
        lo, hi = bounds[k], bounds[k + 1]
        beta[k, lo:hi] += (1.0 - topic_smoothing) / (hi - lo)
    beta /= beta.sum(axis=1, keepdims=True)

    alpha = np.full(n_topics, 1.0 / sharpness)
    width = len(str(vocab_size - 1))
    tokens = tuple(f"w{v:0{width}d}" for v in range(vocab_size))
    vocab = Vocab({tok: i for i, tok in enumerate(tokens)}, tokens)

    docs = []
    for i in range(n_docs):
        theta = rng.dirichlet(alpha)
        stratum = int(np.argmax(theta))
        treatment = int(rng.uniform() < propensity_table[stratum])
        word_probs = theta @ beta
        drawn = rng.choice(vocab_size, size=doc_length, p=word_probs)
        counts: dict = {}
        for v in drawn:
            counts[int(v)] = counts.get(int(v), 0) + 1
        docs.append(
            BowDoc(
                id=f"d{i:06d}",
                counts=counts,
                n_tokens=doc_length,
                treatment=treatment,
                strata=f"s{stratum}",
            )
        )
    return BowCorpus(tuple(docs), vocab)


def corpus_with_outcomes(corpus: BowCorpus, dataset: SimulatedDataset) -> BowCorpus:
    """Copy of the corpus with simulated treatment and outcome attached."""
    docs = tuple(
        BowDoc(
            id=doc.id,
            counts=doc.counts,
            n_tokens=doc.n_tokens,
            treatment=int(tt),
            outcome=float(yy),
            strata=doc.strata,
        )
        for doc, tt, yy in zip(corpus.docs, dataset.treatment, dataset.outcome)
    )
    return BowCorpus(docs, corpus.vocab)


def doc_text(doc: BowDoc, vocab: Vocab) -> str:
    """Reconstruct a space-joined token string (order by vocab index)."""
    parts = []
    for v in sorted(doc.counts):
        parts.extend([vocab.index_to_token[v]] * doc.counts[v])
    return " ".join(parts)
