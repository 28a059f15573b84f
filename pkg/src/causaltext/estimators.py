"""Downstream effect estimators over fitted nuisances.

All estimators consume per-unit propensity and conditional-outcome estimates
and reduce them with a fixed statistic; the same formulas serve the treated
average effect and the natural direct effect. Overlap is enforced by trimming
extreme propensities before any adjusted estimator (never before the
unadjusted difference), and uncertainty comes from a fixed-nuisance bootstrap
over units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

ESTIMATOR_KINDS = ("unadjusted", "q_only", "plugin", "plugin_all_units")


@dataclass(frozen=True)
class Nuisances:
    """Per-unit propensity and conditional-outcome estimates, id-aligned."""

    g_hat: np.ndarray
    q0_hat: np.ndarray
    q1_hat: np.ndarray
    unit_ids: tuple

    def __post_init__(self):
        n = len(self.unit_ids)
        if not (self.g_hat.shape == self.q0_hat.shape == self.q1_hat.shape == (n,)):
            raise ValueError("nuisance arrays must align with unit ids")
        if np.any((self.g_hat <= 0.0) | (self.g_hat >= 1.0)):
            raise ValueError("g_hat must lie strictly inside (0, 1)")

    def __len__(self) -> int:
        return len(self.unit_ids)

    def subset(self, idx) -> "Nuisances":
        return Nuisances(
            g_hat=self.g_hat[idx],
            q0_hat=self.q0_hat[idx],
            q1_hat=self.q1_hat[idx],
            unit_ids=tuple(self.unit_ids[i] for i in np.atleast_1d(idx)),
        )


@dataclass(frozen=True)
class EffectEstimate:
    psi_hat: float
    kind: str
    n_total: int
    n_kept: int
    bootstrap_sd: float | None = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.n_kept > self.n_total:
            raise ValueError("n_kept cannot exceed n_total")
        if self.bootstrap_sd is not None and self.bootstrap_sd < 0:
            raise ValueError("bootstrap_sd must be >= 0")


@dataclass(frozen=True)
class TrimReport:
    kept_idx: np.ndarray
    removed_ids: tuple
    lo: float
    hi: float

    @property
    def n_kept(self) -> int:
        return int(self.kept_idx.size)


def unadjusted(t, y) -> float:
    """Difference of arm means, no adjustment."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    treated = t == 1.0
    if not treated.any() or treated.all():
        raise ValueError("both treatment arms must be nonempty")
    return float(y[treated].mean() - y[~treated].mean())


def psi_q_only(t, nuis: Nuisances) -> float:
    """Mean of q1_hat - q0_hat over treated units only."""
    t = np.asarray(t, dtype=np.float64)
    treated = t == 1.0
    if not treated.any():
        raise ValueError("no treated units")
    return float((nuis.q1_hat[treated] - nuis.q0_hat[treated]).mean())


def psi_plugin(t, nuis: Nuisances) -> float:
    """Propensity-weighted plug-in: mean(dq * g_hat) / mean(t)."""
    t = np.asarray(t, dtype=np.float64)
    if not (t == 1.0).any():
        raise ValueError("no treated units")
    dq = nuis.q1_hat - nuis.q0_hat
    return float((dq * nuis.g_hat).mean() / t.mean())


def psi_plugin_all_units(nuis: Nuisances) -> float:
    """Unweighted mean of q1_hat - q0_hat over all units."""
    if len(nuis) == 0:
        raise ValueError("no units")
    return float((nuis.q1_hat - nuis.q0_hat).mean())


def trim(unit_ids, nuis: Nuisances, lo: float = 0.03, hi: float = 0.97) -> TrimReport:
    """Keep units with lo <= g_hat <= hi (closed interval on both ends)."""
    if not 0.0 < lo < hi < 1.0:
        raise ValueError("need 0 < lo < hi < 1")
    keep = (nuis.g_hat >= lo) & (nuis.g_hat <= hi)
    if not keep.any():
        raise ValueError("all units trimmed")
    kept_idx = np.flatnonzero(keep)
    removed = tuple(unit_ids[i] for i in np.flatnonzero(~keep))
    return TrimReport(kept_idx=kept_idx, removed_ids=removed, lo=lo, hi=hi)


def bootstrap_sd(estimator, n_units: int, replicates: int = 10, seed: int = 0) -> float:
    """Resample units with replacement and return the sample sd of the estimates.

    `estimator` maps an index array into the units to a float; nuisances stay
    fixed across replicates. A replicate where the estimator raises (for
    example a resample with an empty arm) is dropped with a warning.
    """
    if replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    rng = np.random.default_rng(seed)
    values = []
    for rep in range(replicates):
        idx = rng.integers(0, n_units, size=n_units)
        try:
            values.append(estimator(idx))
        except ValueError as err:
            warnings.warn(f"bootstrap replicate {rep} dropped: {err}")
    if len(values) < 2:
        raise ValueError("too few successful bootstrap replicates")
    return float(np.std(values, ddof=1))


def estimate_all(
    t,
    y,
    nuis: Nuisances,
    trim_lo: float = 0.03,
    trim_hi: float = 0.97,
    replicates: int = 10,
    seed: int = 0,
    refit_fitter=None,
):
    """Run all four estimators with trimming and bootstrap uncertainty.

    Trimming applies to every adjusted estimator and never to the unadjusted
    difference. By default the bootstrap holds nuisances fixed; passing
    `refit_fitter` (a callable over arrays of original unit indices returning
    Nuisances for exactly those units) refits them per replicate so the sd
    also reflects nuisance noise. Returns ({kind: EffectEstimate}, TrimReport).
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = t.size
    report = trim(nuis.unit_ids, nuis, trim_lo, trim_hi)
    kept = report.kept_idx
    t_kept = t[kept]
    nuis_kept = nuis.subset(kept)

    def resampled_nuis(idx):
        return refit_fitter(kept[idx]) if refit_fitter is not None else nuis_kept.subset(idx)

    estimates = {}

    sd = bootstrap_sd(lambda idx: unadjusted(t[idx], y[idx]), n, replicates, seed=_spawn(seed, 0))
    estimates["unadjusted"] = EffectEstimate(unadjusted(t, y), "unadjusted", n, n, sd)

    sd = bootstrap_sd(
        lambda idx: psi_q_only(t_kept[idx], resampled_nuis(idx)),
        report.n_kept,
        replicates,
        seed=_spawn(seed, 1),
    )
    estimates["q_only"] = EffectEstimate(psi_q_only(t_kept, nuis_kept), "q_only", n, report.n_kept, sd)

    sd = bootstrap_sd(
        lambda idx: psi_plugin(t_kept[idx], resampled_nuis(idx)),
        report.n_kept,
        replicates,
        seed=_spawn(seed, 2),
    )
    estimates["plugin"] = EffectEstimate(psi_plugin(t_kept, nuis_kept), "plugin", n, report.n_kept, sd)

    sd = bootstrap_sd(
        lambda idx: psi_plugin_all_units(resampled_nuis(idx)),
        report.n_kept,
        replicates,
        seed=_spawn(seed, 3),
    )
    estimates["plugin_all_units"] = EffectEstimate(
        psi_plugin_all_units(nuis_kept), "plugin_all_units", n, report.n_kept, sd
    )
    return estimates, report


def _spawn(seed: int, branch: int) -> int:
    return int(np.random.SeedSequence([int(seed), branch]).generate_state(1)[0])
