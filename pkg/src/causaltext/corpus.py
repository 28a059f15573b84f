"""Document ingestion: tokenization, vocabulary, bag-of-words, fold splits.

Input records are line-delimited JSON objects with keys id, text, treatment,
and optional outcome/strata. Vocab and BowCorpus are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class TokenizerConfig:
    min_token_len: int = 2


@dataclass(frozen=True)
class DocumentRecord:
    """One statistical unit: text plus treatment, optional outcome and stratum."""

    id: str
    text: str
    treatment: int
    outcome: float | None = None
    strata: str | None = None

    def __post_init__(self):
        if self.treatment not in (0, 1):
            raise ValueError(f"record {self.id!r}: treatment must be 0 or 1, got {self.treatment!r}")


@dataclass(frozen=True)
class Vocab:
    token_to_index: dict
    index_to_token: tuple

    @property
    def size(self) -> int:
        return len(self.index_to_token)

    def __len__(self) -> int:
        return len(self.index_to_token)


@dataclass(frozen=True)
class BowDoc:
    id: str
    counts: dict  # token index -> count, nonzero entries only
    n_tokens: int  # in-vocabulary tokens kept
    treatment: int
    outcome: float | None = None
    strata: str | None = None


@dataclass(frozen=True)
class BowCorpus:
    docs: tuple
    vocab: Vocab

    def __len__(self) -> int:
        return len(self.docs)

    def count_matrix(self) -> np.ndarray:
        """Dense [n_docs, vocab_size] float64 count matrix."""
        mat = np.zeros((len(self.docs), self.vocab.size))
        for i, doc in enumerate(self.docs):
            for v, c in doc.counts.items():
                mat[i, v] = c
        return mat

    def treatments(self) -> np.ndarray:
        return np.array([d.treatment for d in self.docs], dtype=np.float64)

    def outcomes(self) -> np.ndarray:
        vals = []
        for d in self.docs:
            if d.outcome is None:
                raise ValueError(f"document {d.id!r} has no outcome")
            vals.append(d.outcome)
        return np.array(vals, dtype=np.float64)

    def strata_labels(self) -> list:
        labels = []
        for d in self.docs:
            if d.strata is None:
                raise ValueError(f"document {d.id!r} has no stratum")
            labels.append(d.strata)
        return labels

    def ids(self) -> tuple:
        return tuple(d.id for d in self.docs)


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list:
    """Lowercase, split on non-alphanumeric runs, drop tokens shorter than min length."""
    tokens = _TOKEN_SPLIT.split(text.lower())
    return [t for t in tokens if len(t) >= config.min_token_len]


def build_vocab(token_lists, min_count: int = 1, max_size: int | None = None) -> Vocab:
    """Tokens with frequency >= min_count, ranked by frequency then lexicographically.

    The frequency-then-lexicographic order makes the index assignment
    reproducible across runs and platforms.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freqs = Counter()
    for tokens in token_lists:
        freqs.update(tokens)
    items = [(tok, c) for tok, c in freqs.items() if c >= min_count]
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        items = items[:max_size]
    if not items:
        raise ValueError("empty vocabulary")
    index_to_token = tuple(tok for tok, _ in items)
    token_to_index = {tok: i for i, tok in enumerate(index_to_token)}
    return Vocab(token_to_index, index_to_token)


def to_bow(tokens, vocab: Vocab):
    """Count in-vocabulary tokens; returns (index->count dict, kept-token count).

    Out-of-vocabulary tokens are silently dropped: a categorical likelihood
    over the vocabulary has no natural slot for an unknown symbol.
    """
    if vocab.size == 0:
        raise ValueError("empty vocabulary")
    counts: dict = {}
    kept = 0
    for tok in tokens:
        idx = vocab.token_to_index.get(tok)
        if idx is None:
            continue
        counts[idx] = counts.get(idx, 0) + 1
        kept += 1
    return counts, kept


def build_corpus(records, tokenizer: TokenizerConfig = TokenizerConfig(), min_count: int = 1, max_size: int | None = None) -> BowCorpus:
    """Tokenize records, build the vocabulary, and assemble an immutable corpus."""
    token_lists = [tokenize(r.text, tokenizer) for r in records]
    vocab = build_vocab(token_lists, min_count=min_count, max_size=max_size)
    docs = []
    for record, tokens in zip(records, token_lists):
        counts, kept = to_bow(tokens, vocab)
        docs.append(
            BowDoc(
                id=record.id,
                counts=counts,
                n_tokens=kept,
                treatment=record.treatment,
                outcome=record.outcome,
                strata=record.strata,
            )
        )
    return BowCorpus(tuple(docs), vocab)


def split_folds(corpus, k: int, seed: int) -> np.ndarray:
    """Assign each doc to one of k folds; deterministic, sizes differ by <= 1."""
    n = len(corpus)
    if k < 2 or k > n:
        raise ValueError(f"k must be in [2, {n}], got {k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for fold in range(k):
        assignment[perm[fold::k]] = fold
    return assignment


def load_records(path, format: str = "jsonl") -> list:
    """Parse line-delimited records in file order; errors carry line numbers."""
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    records = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: malformed record on line {lineno}: {err}") from None
            try:
                record = _record_from_obj(obj)
            except (KeyError, TypeError, ValueError) as err:
                raise ValueError(f"{path}: invalid record on line {lineno}: {err}") from None
            if record.id in seen:
                raise ValueError(
                    f"{path}: duplicate id {record.id!r} on line {lineno} (first seen on line {seen[record.id]})"
                )
            seen[record.id] = lineno
            records.append(record)
    return records


def _record_from_obj(obj) -> DocumentRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    doc_id = obj["id"]
    text = obj["text"]
    treatment = obj["treatment"]
    if not isinstance(doc_id, str):
        raise ValueError("id must be a string")
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    if not isinstance(treatment, int) or isinstance(treatment, bool):
        raise ValueError("treatment must be an integer")
    outcome = obj.get("outcome")
    if outcome is not None:
        outcome = float(outcome)
    strata = obj.get("strata")
    if strata is not None and not isinstance(strata, str):
        raise ValueError("strata must be a string")
    return DocumentRecord(id=doc_id, text=text, treatment=treatment, outcome=outcome, strata=strata)


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {"id": r.id, "text": r.text, "treatment": r.treatment}
            if r.outcome is not None:
                obj["outcome"] = r.outcome
            if r.strata is not None:
                obj["strata"] = r.strata
            fh.write(json.dumps(obj) + "\n")


def write_folds_csv(corpus, assignment, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "fold"])
        for doc, fold in zip(corpus.docs, assignment):
            writer.writerow([doc.id, int(fold)])


def vocab_hash(vocab: Vocab) -> str:
    """Stable fingerprint of the index->token order; checkpoints verify it."""
    digest = hashlib.sha256("\n".join(vocab.index_to_token).encode("utf-8"))
    return digest.hexdigest()
