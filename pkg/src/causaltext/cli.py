"""Batch entry points: ingest, simulate, train, estimate, benchmark, gradcheck.

The estimate command runs the full pipeline for one dataset and one
representation: ingest -> (optional) outcome simulation -> representation
fitting -> cross-fitted nuisance prediction -> trimming -> all four
estimators with bootstrap uncertainty -> CSV. The benchmark command crosses
representations with confounding/noise/exogeneity settings and seeds,
executing cells on a bounded worker pool; every cell derives its seeds
hierarchically so execution order never affects results.

Config files are plain key=value lines; command-line flags override file
values and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__, atm, baselines, corpus as corpus_mod, estimators, simulate, tensor

REPRESENTATIONS = ("catm", "atm", "nn", "bow", "lda", "oracle_strata", "oracle_propensity")

CSV_COLUMNS = ["dataset", "representation", "estimator", "b1", "gamma", "p", "psi_true", "psi_hat", "sd", "n_kept", "seed"]


def _derive(seed: int, *branch) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, branch)]).generate_state(1)[0])


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved settings for one estimate run (one dataset, one representation)."""

    dataset: str = "dataset"
    input: str | None = None
    representation: str = "catm"
    output_dir: str | None = None
    seed: int = 0
    # outcome simulation
    simulate: bool = False
    b1: float = 10.0
    gamma: float = 1.0
    family: str = "continuous"
    p: float = 0.0
    # corpus construction
    min_count: int = 1
    max_vocab: int | None = None
    min_token_len: int = 2
    # model
    n_topics: int = 32
    hidden: int = 128
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    binary_outcome_loss: str = "cross_entropy"
    # nuisance estimation
    crossfit_folds: int = 5
    in_sample: bool = False
    l2: float = 1e-4
    lda_iterations: int = 200
    lda_burn_in: int = 100
    # estimation
    trim_lo: float = 0.03
    trim_hi: float = 0.97
    bootstrap_replicates: int = 10
    bootstrap_refit: bool = False


PIPELINE_TYPES = {
    "dataset": str,
    "input": str,
    "representation": str,
    "output_dir": str,
    "seed": int,
    "simulate": "bool",
    "b1": float,
    "gamma": float,
    "family": str,
    "p": float,
    "min_count": int,
    "max_vocab": int,
    "min_token_len": int,
    "n_topics": int,
    "hidden": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "binary_outcome_loss": str,
    "crossfit_folds": int,
    "in_sample": "bool",
    "l2": float,
    "lda_iterations": int,
    "lda_burn_in": int,
    "trim_lo": float,
    "trim_hi": float,
    "bootstrap_replicates": int,
    "bootstrap_refit": "bool",
}


@dataclass(frozen=True)
class BenchmarkConfig:
    """Grid settings; model/estimation fields mirror PipelineConfig."""

    output_dir: str | None = None
    input: str | None = None
    dataset: str = "synthetic"
    representations: tuple = ("catm", "bow")
    b1_list: tuple = (1.0, 10.0, 100.0)
    gamma_list: tuple = (1.0,)
    p_list: tuple = (0.0,)
    seeds: tuple = (0, 1, 2)
    seed: int = 0
    family: str = "continuous"
    workers: int = 4
    # synthetic corpus (used when no input path is given)
    n_docs: int = 2000
    true_topics: int = 5
    vocab_size: int = 50
    doc_length: int = 40
    sharpness: float = 20.0
    propensity_table: tuple = (0.2, 0.35, 0.5, 0.65, 0.8)
    # pipeline passthrough
    min_count: int = 1
    max_vocab: int | None = None
    min_token_len: int = 2
    n_topics: int = 32
    hidden: int = 128
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    binary_outcome_loss: str = "cross_entropy"
    crossfit_folds: int = 5
    in_sample: bool = False
    l2: float = 1e-4
    lda_iterations: int = 200
    lda_burn_in: int = 100
    trim_lo: float = 0.03
    trim_hi: float = 0.97
    bootstrap_replicates: int = 10
    bootstrap_refit: bool = False


BENCHMARK_TYPES = {
    "output_dir": str,
    "input": str,
    "dataset": str,
    "representations": "str_tuple",
    "b1_list": "float_tuple",
    "gamma_list": "float_tuple",
    "p_list": "float_tuple",
    "seeds": "int_tuple",
    "seed": int,
    "family": str,
    "workers": int,
    "n_docs": int,
    "true_topics": int,
    "vocab_size": int,
    "doc_length": int,
    "sharpness": float,
    "propensity_table": "float_tuple",
    "min_count": int,
    "max_vocab": int,
    "min_token_len": int,
    "n_topics": int,
    "hidden": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "binary_outcome_loss": str,
    "crossfit_folds": int,
    "in_sample": "bool",
    "l2": float,
    "lda_iterations": int,
    "lda_burn_in": int,
    "trim_lo": float,
    "trim_hi": float,
    "bootstrap_replicates": int,
    "bootstrap_refit": "bool",
}


def read_config_file(path) -> dict:
    """Parse key=value lines; blank lines and '#' comments are ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno} is not key=value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    return values


def _coerce(kind, raw: str):
    if raw == "" or raw.lower() == "none":
        return None
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "float_tuple":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if kind == "int_tuple":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if kind == "str_tuple":
        return tuple(x.strip().replace("-", "_") for x in raw.split(",") if x.strip())
    return kind(raw)


def resolve_config(cls, types: dict, file_values: dict, flag_values: dict):
    """Merge config-file values and flag overrides; unknown keys are rejected."""
    merged = {}
    for source in (file_values, flag_values):
        for key, raw in source.items():
            if raw is None:
                continue
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            merged[key] = _coerce(types[key], raw) if isinstance(raw, str) else raw
    return cls(**merged)


def config_echo(config) -> str:
    lines = []
    for f in sorted(fields(config), key=lambda f: f.name):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def write_csv(rows, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        writer = csv.writer(fh)
        header = CSV_COLUMNS + (["elapsed_s"] if rows and "elapsed_s" in rows[0] else [])
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in header])
    finally:
        if own:
            fh.close()


def _write_run_meta(out_dir, config, seed: int, vocab_digest: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.echo.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_echo(config))
    meta = {"version": __version__, "seed": seed, "vocab_hash": vocab_digest}
    with open(os.path.join(out_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_corpus(config: PipelineConfig):
    if config.input is None:
        raise ValueError("no input path given")
    if not os.path.exists(config.input):
        raise ValueError(f"input path not found: {config.input}")
    records = corpus_mod.load_records(config.input)
    tokenizer = corpus_mod.TokenizerConfig(min_token_len=config.min_token_len)
    return corpus_mod.build_corpus(records, tokenizer, min_count=config.min_count, max_size=config.max_vocab)


def fit_nuisances(config: PipelineConfig, corpus, t, y, pi_true, folds):
    """Dispatch a representation name to its nuisance-fitting route.

    Returns (Nuisances, refit_fitter); the fitter refits the downstream
    regressions on a unit subset for the refit-mode bootstrap and is None for
    trained representations, where per-replicate retraining is out of budget.
    """
    rep = config.representation.replace("-", "_")
    if rep not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {config.representation!r}")
    family = config.family
    model_cfg = atm.AtmConfig(
        n_topics=config.n_topics,
        hidden=config.hidden,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        outcome_family=family,
        binary_outcome_loss=config.binary_outcome_loss,
        seed=_derive(config.seed, 3),
    )
    if rep == "catm":
        if config.in_sample:
            params, _ = atm.train(corpus, t, y, model_cfg)
            return atm.predict_nuisances(corpus, params, family), None
        fold_params = atm.train_crossfit(corpus, t, y, model_cfg, folds)
        return atm.predict_nuisances(corpus, fold_params, family, folds=folds), None
    if rep == "nn":
        nuis = baselines.train_supervised_nn(corpus, t, y, model_cfg, folds=None if config.in_sample else folds)
        return nuis, None

    if rep == "atm":
        unsup_cfg = replace(model_cfg, mode="unsupervised")
        params, _ = atm.train(corpus, None, None, unsup_cfg)
        features = baselines.atm_features(corpus, params)
    elif rep == "lda":
        proportions = baselines.lda_gibbs(
            corpus,
            config.n_topics,
            iterations=config.lda_iterations,
            burn_in=config.lda_burn_in,
            seed=_derive(config.seed, 3),
        )
        features = baselines.topic_features(corpus, proportions)
    elif rep == "bow":
        features = baselines.bow_features(corpus)
    elif rep == "oracle_strata":
        features = baselines.one_hot_strata_features(corpus.strata_labels(), corpus.ids())
    else:  # oracle_propensity
        if pi_true is None:
            raise ValueError("oracle_propensity requires simulated data with known propensities")
        features = baselines.propensity_feature(pi_true, corpus.ids())
    nuis = baselines.fit_downstream_nuisances(
        features, t, y, outcome_family=family, l2=config.l2, folds=None if config.in_sample else folds
    )

    def refit(idx):
        sub = baselines.FeatureMatrix(
            values=features.values[idx],
            has_intercept=features.has_intercept,
            ids=tuple(features.ids[i] for i in idx),
        )
        return baselines.fit_downstream_nuisances(sub, t[idx], y[idx], outcome_family=family, l2=config.l2)

    return nuis, refit


def run_pipeline(config: PipelineConfig, corpus=None):
    """Execute the full chain for one dataset/representation; returns CSV rows.

    Deterministic given the config: rerunning with identical settings yields
    byte-identical CSV output.
    """
    if corpus is None:
        corpus = _load_corpus(config)
    t = corpus.treatments()
    pi_true = None
    psi_true = float("nan")
    y = None
    if config.simulate:
        sim_cfg = simulate.SimConfig(
            b1=config.b1, gamma=config.gamma, family=config.family, p=config.p, seed=_derive(config.seed, 1)
        )
        dataset = simulate.simulate_dataset(corpus.strata_labels(), t, sim_cfg)
        t = dataset.treatment
        y = dataset.outcome
        pi_true = dataset.pi_true
        psi_true = dataset.psi_true
    else:
        y = corpus.outcomes()

    folds = None
    if not config.in_sample:
        folds = corpus_mod.split_folds(corpus, config.crossfit_folds, seed=_derive(config.seed, 2))

    nuis, refit_fitter = fit_nuisances(config, corpus, t, y, pi_true, folds)
    if config.bootstrap_refit and refit_fitter is None:
        raise ValueError("refit-mode bootstrap is only available for fixed-representation baselines")
    estimates, _ = estimators.estimate_all(
        t,
        y,
        nuis,
        trim_lo=config.trim_lo,
        trim_hi=config.trim_hi,
        replicates=config.bootstrap_replicates,
        seed=_derive(config.seed, 4),
        refit_fitter=refit_fitter if config.bootstrap_refit else None,
    )
    rows = []
    for kind in estimators.ESTIMATOR_KINDS:
        est = estimates[kind]
        rows.append(
            {
                "dataset": config.dataset,
                "representation": config.representation.replace("-", "_"),
                "estimator": kind,
                "b1": config.b1 if config.simulate else None,
                "gamma": config.gamma if config.simulate else None,
                "p": config.p if config.simulate else None,
                "psi_true": psi_true,
                "psi_hat": est.psi_hat,
                "sd": est.bootstrap_sd,
                "n_kept": est.n_kept,
                "seed": config.seed,
            }
        )
    if config.output_dir:
        _write_run_meta(config.output_dir, config, config.seed, corpus_mod.vocab_hash(corpus.vocab))
        write_csv(rows, os.path.join(config.output_dir, "estimates.csv"))
    return rows


# ---------------------------------------------------------------------------
# Benchmark grid
# ---------------------------------------------------------------------------


def _benchmark_corpus(config: BenchmarkConfig):
    if config.input is not None:
        return _load_corpus(_pipeline_from_benchmark(config, "bow", 0.0, 1.0, 0.0, 0))
    return simulate.generate_synthetic_corpus(
        n_topics=config.true_topics,
        vocab_size=config.vocab_size,
        n_docs=config.n_docs,
        doc_length=config.doc_length,
        sharpness=config.sharpness,
        propensity_table=config.propensity_table,
        seed=_derive(config.seed, 0),
    )


def _pipeline_from_benchmark(config: BenchmarkConfig, rep: str, b1: float, gamma: float, p: float, seed: int):
    return PipelineConfig(
        dataset=config.dataset,
        input=config.input,
        representation=rep,
        seed=seed,
        simulate=True,
        b1=b1,
        gamma=gamma,
        family=config.family,
        p=p,
        min_count=config.min_count,
        max_vocab=config.max_vocab,
        min_token_len=config.min_token_len,
        n_topics=config.n_topics,
        hidden=config.hidden,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        binary_outcome_loss=config.binary_outcome_loss,
        crossfit_folds=config.crossfit_folds,
        in_sample=config.in_sample,
        l2=config.l2,
        lda_iterations=config.lda_iterations,
        lda_burn_in=config.lda_burn_in,
        trim_lo=config.trim_lo,
        trim_hi=config.trim_hi,
        bootstrap_replicates=config.bootstrap_replicates,
        bootstrap_refit=config.bootstrap_refit,
    )


def benchmark_cells(config: BenchmarkConfig):
    """Enumerate grid cells; the derived cell seed ignores the representation
    so every method sees the same simulated data."""
    cells = []
    for ib1, b1 in enumerate(config.b1_list):
        for ig, gamma in enumerate(config.gamma_list):
            for ip, p in enumerate(config.p_list):
                for iseed, seed_entry in enumerate(config.seeds):
                    cell_seed = _derive(config.seed, 1 + ib1, ig, ip, iseed)
                    for rep in config.representations:
                        cells.append((rep, b1, gamma, p, int(seed_entry), cell_seed))
    return cells


def run_benchmark(config: BenchmarkConfig):
    """Execute every grid cell; returns (report rows, failure records)."""
    base_corpus = _benchmark_corpus(config)
    cells = benchmark_cells(config)

    def run_cell(cell):
        rep, b1, gamma, p, _seed_entry, cell_seed = cell
        pipe_cfg = _pipeline_from_benchmark(config, rep, b1, gamma, p, cell_seed)
        start = time.perf_counter()
        rows = run_pipeline(pipe_cfg, corpus=base_corpus)
        elapsed = time.perf_counter() - start
        for row in rows:
            row["elapsed_s"] = round(elapsed, 3)
        return rows

    results = [None] * len(cells)
    failures = []
    workers = max(1, config.workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(run_cell, cell): i for i, cell in enumerate(cells)}
        for future, i in futures.items():
            try:
                results[i] = future.result()
            except Exception as err:  # record and continue: grid coverage stays explicit
                failures.append({"cell": cells[i][:5], "error": f"{type(err).__name__}: {err}"})
                results[i] = []
    rows = [row for cell_rows in results if cell_rows for row in cell_rows]
    if config.output_dir:
        os.makedirs(config.output_dir, exist_ok=True)
        _write_run_meta(config.output_dir, config, config.seed, corpus_mod.vocab_hash(base_corpus.vocab))
        write_csv(rows, os.path.join(config.output_dir, "report.csv"))
        with open(os.path.join(config.output_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(summarize_benchmark(rows))
        if failures:
            with open(os.path.join(config.output_dir, "failures.txt"), "w", encoding="utf-8") as fh:
                for rec in failures:
                    fh.write(f"{rec['cell']}: {rec['error']}\n")
    return rows, failures


def summarize_benchmark(rows) -> str:
    """Median estimates across seeds, one column per simulation setting,
    with ground-truth and unadjusted rows on top."""
    settings = sorted({(r["b1"], r["gamma"], r["p"]) for r in rows})
    reps = sorted({r["representation"] for r in rows})

    def median_psi(rep, estimator, setting):
        vals = [
            r["psi_hat"]
            for r in rows
            if r["representation"] == rep
            and r["estimator"] == estimator
            and (r["b1"], r["gamma"], r["p"]) == setting
        ]
        return float(np.median(vals)) if vals else float("nan")

    def truth(setting):
        vals = [r["psi_true"] for r in rows if (r["b1"], r["gamma"], r["p"]) == setting]
        return float(np.median(vals)) if vals else float("nan")

    header = ["method".ljust(28)] + [f"b1={s[0]:g},g={s[1]:g},p={s[2]:g}".rjust(20) for s in settings]
    lines = ["".join(header)]
    lines.append("".join(["ground_truth".ljust(28)] + [f"{truth(s):.3f}".rjust(20) for s in settings]))
    unadj = ["unadjusted".ljust(28)]
    for s in settings:
        vals = [r["psi_hat"] for r in rows if r["estimator"] == "unadjusted" and (r["b1"], r["gamma"], r["p"]) == s]
        unadj.append(f"{float(np.median(vals)):.3f}".rjust(20) if vals else "nan".rjust(20))
    lines.append("".join(unadj))
    for rep in reps:
        for estimator in ("q_only", "plugin", "plugin_all_units"):
            row = [f"{rep} {estimator}".ljust(28)]
            for s in settings:
                row.append(f"{median_psi(rep, estimator, s):.3f}".rjust(20))
            lines.append("".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Gradient-check command
# ---------------------------------------------------------------------------


def gradcheck_reports(seed: int = 0, instances: int = 20, tolerance: float = 1e-4):
    """Finite-difference checks for every op rule and every model variant."""
    reports = tensor.standard_op_checks(seed=seed, instances=instances, tolerance=tolerance)
    rng = np.random.default_rng(seed)
    variants = [
        ("causal_continuous", atm.AtmConfig(n_topics=3, hidden=4, mode="causal", outcome_family="continuous")),
        ("causal_binary_ce", atm.AtmConfig(n_topics=3, hidden=4, mode="causal", outcome_family="binary")),
        (
            "causal_binary_sq",
            atm.AtmConfig(
                n_topics=3, hidden=4, mode="causal", outcome_family="binary", binary_outcome_loss="squared_error"
            ),
        ),
        ("unsupervised", atm.AtmConfig(n_topics=3, hidden=4, mode="unsupervised")),
        ("supervised", atm.AtmConfig(n_topics=3, hidden=4, mode="supervised")),
    ]
    n_docs, v_size = 5, 7
    for name, cfg in variants:
        counts = rng.integers(0, 4, size=(n_docs, v_size)).astype(float)
        counts[0, rng.integers(0, v_size)] += 1  # ensure at least one token
        t = rng.integers(0, 2, size=n_docs).astype(float)
        if cfg.outcome_family == "binary":
            y = rng.integers(0, 2, size=n_docs).astype(float)
        else:
            y = rng.normal(size=n_docs)
        eps = rng.standard_normal((n_docs, cfg.n_topics))
        params = {
            name_: 0.5 * rng.normal(size=arr.shape)
            for name_, arr in atm.init_params(v_size, cfg, rng).as_dict().items()
        }
        builder = atm.loss_builder(counts, t, y, cfg, eps)
        reports.append((f"model_{name}", tensor.grad_check(builder, params, tolerance=tolerance)))
    return reports


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _flag_parser(prog: str, types: dict) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=prog)
    parser.add_argument("--config", default=None, help="key=value config file")
    for key in types:
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    return parser


def _resolve(argv, prog: str, cls, types: dict):
    args = _flag_parser(prog, types).parse_args(argv)
    file_values = read_config_file(args.config) if args.config else {}
    flag_values = {key: getattr(args, key) for key in types}
    return resolve_config(cls, types, file_values, flag_values)


def cmd_estimate(argv) -> int:
    config = _resolve(argv, "causaltext estimate", PipelineConfig, PIPELINE_TYPES)
    rows = run_pipeline(config)
    write_csv(rows, sys.stdout)
    return 0


def cmd_benchmark(argv) -> int:
    config = _resolve(argv, "causaltext benchmark", BenchmarkConfig, BENCHMARK_TYPES)
    rows, failures = run_benchmark(config)
    sys.stdout.write(summarize_benchmark(rows))
    for rec in failures:
        sys.stdout.write(f"FAILED cell {rec['cell']}: {rec['error']}\n")
    return 0


def cmd_ingest(argv) -> int:
    config = _resolve(argv, "causaltext ingest", PipelineConfig, PIPELINE_TYPES)
    if config.output_dir is None:
        raise ValueError("ingest requires --output-dir")
    corpus = _load_corpus(config)
    folds = corpus_mod.split_folds(corpus, config.crossfit_folds, seed=_derive(config.seed, 2))
    os.makedirs(config.output_dir, exist_ok=True)
    _write_run_meta(config.output_dir, config, config.seed, corpus_mod.vocab_hash(corpus.vocab))
    with open(os.path.join(config.output_dir, "vocab.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(corpus.vocab.index_to_token) + "\n")
    corpus_mod.write_folds_csv(corpus, folds, os.path.join(config.output_dir, "folds.csv"))
    print(f"ingested {len(corpus)} docs, vocabulary size {corpus.vocab.size}")
    return 0


def cmd_simulate(argv) -> int:
    config = _resolve(argv, "causaltext simulate", PipelineConfig, PIPELINE_TYPES)
    if config.output_dir is None:
        raise ValueError("simulate requires --output-dir")
    corpus = _load_corpus(config)
    sim_cfg = simulate.SimConfig(
        b1=config.b1, gamma=config.gamma, family=config.family, p=config.p, seed=_derive(config.seed, 1)
    )
    dataset = simulate.simulate_dataset(corpus.strata_labels(), corpus.treatments(), sim_cfg)
    os.makedirs(config.output_dir, exist_ok=True)
    _write_run_meta(config.output_dir, config, config.seed, corpus_mod.vocab_hash(corpus.vocab))
    records = corpus_mod.load_records(config.input)
    out_records = [
        replace(rec, treatment=int(tt), outcome=float(yy))
        for rec, tt, yy in zip(records, dataset.treatment, dataset.outcome)
    ]
    corpus_mod.write_records(out_records, os.path.join(config.output_dir, "simulated.jsonl"))
    sidecar = {
        "psi_true": dataset.psi_true,
        "pi_true": {rec.id: float(pi) for rec, pi in zip(records, dataset.pi_true)},
    }
    with open(os.path.join(config.output_dir, "simulation_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    print(f"simulated outcomes for {len(corpus)} docs, psi_true={dataset.psi_true:.6g}")
    return 0


def cmd_train(argv) -> int:
    types = dict(PIPELINE_TYPES, mode=str, checkpoint=str)

    @dataclass(frozen=True)
    class TrainConfig(PipelineConfig):
        mode: str = "causal"
        checkpoint: str = "checkpoint.json"

    config = _resolve(argv, "causaltext train", TrainConfig, types)
    corpus = _load_corpus(config)
    model_cfg = atm.AtmConfig(
        n_topics=config.n_topics,
        hidden=config.hidden,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        mode=config.mode,
        outcome_family=config.family,
        binary_outcome_loss=config.binary_outcome_loss,
        seed=_derive(config.seed, 3),
    )
    t = corpus.treatments() if config.mode == "causal" else None
    y = corpus.outcomes() if config.mode == "causal" else None
    params, trace = atm.train(corpus, t, y, model_cfg)
    atm.save_checkpoint(config.checkpoint, params, model_cfg, corpus_mod.vocab_hash(corpus.vocab))
    print(f"trained {config.mode} model for {config.epochs} epochs; final loss {trace[-1]:.6g}")
    print(f"checkpoint written to {config.checkpoint}")
    return 0


def cmd_gradcheck(argv) -> int:
    parser = argparse.ArgumentParser(prog="causaltext gradcheck")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--instances", type=int, default=20)
    parser.add_argument("--tolerance", type=float, default=1e-4)
    args = parser.parse_args(argv)
    reports = gradcheck_reports(seed=args.seed, instances=args.instances, tolerance=args.tolerance)
    worst: dict = {}
    for name, report in reports:
        entry = worst.setdefault(name, [0.0, True])
        entry[0] = max(entry[0], report.max_rel_error)
        entry[1] = entry[1] and report.passed
    for name in sorted(worst):
        max_err, passed = worst[name]
        print(f"{'PASS' if passed else 'FAIL'} {name}: max relative error {max_err:.3g}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = {
        "ingest": cmd_ingest,
        "simulate": cmd_simulate,
        "train": cmd_train,
        "estimate": cmd_estimate,
        "benchmark": cmd_benchmark,
        "gradcheck": cmd_gradcheck,
    }
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: causaltext {ingest,simulate,train,estimate,benchmark,gradcheck} [options]")
        return 0 if argv else 2
    command = argv[0]
    if command not in commands:
        print(f"unknown command {command!r}", file=sys.stderr)
        return 2
    return commands[command](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
