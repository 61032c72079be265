"""Synthetic labeled long-document corpora and corpus file handling.

Generated documents are filler text with a handful of planted signal
tokens whose identity determines the label, so the Bayes-optimal rule
(scan the full text for signal words) is known by construction. Signal
positions follow a configurable policy; with the ``tail`` policy every
planted token lands strictly past 90% of the document, which makes the
label unrecoverable from any prefix-only view of a long document.

Lengths are log-uniform between the configured bounds, giving the heavy
length tail that makes multi-pass encoding and truncation effects
observable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chunking import (RESERVED_TOKENS, TokenizedDocument, Vocabulary,
                       chunk_count)


class CorpusError(ValueError):
    pass


POSITION_POLICIES = ("uniform", "tail", "head")


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for one generated corpus."""

    n_docs: int = 1000
    min_tokens: int = 20
    max_tokens: int = 2000
    vocab_size: int = 200           # reserved + signal + filler, total
    signal_tokens_per_class: int = 4
    position_policy: str = "tail"   # uniform | tail | head
    signal_density: float = 0.01    # planted tokens per content token (min 2)
    label_balance: float = 0.5      # P(label = 1)
    seed: int = 0
    split_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)  # train/valid/test

    def validate(self) -> None:
        if self.n_docs < 1:
            raise CorpusError("need at least one document")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise CorpusError(
                f"bad length range [{self.min_tokens}, {self.max_tokens}]")
        if self.position_policy not in POSITION_POLICIES:
            raise CorpusError(f"unknown position policy {self.position_policy!r}")
        if not 0.0 < self.label_balance < 1.0:
            raise CorpusError("label balance must lie in (0, 1)")
        if self.signal_tokens_per_class < 1 or self.signal_density <= 0:
            raise CorpusError("need positive signal tokens and density")
        reserved = len(RESERVED_TOKENS) + 2 * self.signal_tokens_per_class
        if self.vocab_size < reserved + 1:
            raise CorpusError(
                f"vocab size {self.vocab_size} too small to reserve "
                f"{2 * self.signal_tokens_per_class} signal tokens plus filler")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise CorpusError(f"split fractions must sum to 1, got {self.split_fractions}")


@dataclass
class CorpusRecord:
    """One labeled document, in text form."""

    doc_id: str
    text: str
    label: int | None = None
    split: str = "train"

    def to_json(self) -> str:
        obj = {"id": self.doc_id, "text": self.text, "split": self.split}
        if self.label is not None:
            obj["label"] = self.label
        return json.dumps(obj, sort_keys=True)


@dataclass
class ManifestEntry:
    """Ground truth for one generated document: where the signals sit."""

    doc_id: str
    label: int
    length: int
    positions: list[int]  # 1-based token positions of planted signal tokens

    def to_json(self) -> str:
        return json.dumps({"id": self.doc_id, "label": self.label,
                           "length": self.length, "positions": self.positions},
                          sort_keys=True)


def signal_words(spec: SyntheticSpec) -> tuple[list[str], list[str]]:
    """Signal vocabularies for class 0 and class 1, disjoint from filler."""
    s = spec.signal_tokens_per_class
    return ([f"sig0x{i:02d}" for i in range(s)],
            [f"sig1x{i:02d}" for i in range(s)])


def build_vocabulary(spec: SyntheticSpec) -> Vocabulary:
    sig0, sig1 = signal_words(spec)
    n_filler = spec.vocab_size - len(RESERVED_TOKENS) - len(sig0) - len(sig1)
    filler = [f"w{i:05d}" for i in range(n_filler)]
    return Vocabulary.from_words(sig0 + sig1 + filler)


def _position_bounds(policy: str, k: int) -> tuple[int, int]:
    # 1-based inclusive range of admissible planted positions
    if policy == "tail":
        return math.floor(0.9 * k) + 1, k
    if policy == "head":
        return 1, max(1, math.ceil(0.1 * k))
    return 1, k


def generate(spec: SyntheticSpec) -> tuple[list[CorpusRecord], list[ManifestEntry], Vocabulary]:
    """Seeded synthetic corpus plus its ground-truth manifest.

    Each document draws a log-uniform length, a Bernoulli label, and
    ``max(2, round(density * k))`` planted tokens from the label's signal
    vocabulary at positions sampled from the position policy. Identical
    specs produce bit-identical corpora; documents are generated from
    per-document seeds so sharded generation matches serial generation.
    """
    spec.validate()
    vocab = build_vocabulary(spec)
    sig0, sig1 = signal_words(spec)
    signal = (np.array(sig0), np.array(sig1))
    n_filler = spec.vocab_size - len(RESERVED_TOKENS) - len(sig0) - len(sig1)
    filler_words = np.array([f"w{i:05d}" for i in range(n_filler)])
    master = np.random.SeedSequence(spec.seed)
    doc_seeds = master.spawn(spec.n_docs)
    n_train = round(spec.split_fractions[0] * spec.n_docs)
    n_valid = round(spec.split_fractions[1] * spec.n_docs)
    records: list[CorpusRecord] = []
    manifest: list[ManifestEntry] = []
    log_lo, log_hi = math.log(spec.min_tokens), math.log(spec.max_tokens)
    for i in range(spec.n_docs):
        rng = np.random.default_rng(doc_seeds[i])
        k = int(np.clip(round(math.exp(rng.uniform(log_lo, log_hi))),
                        spec.min_tokens, spec.max_tokens))
        label = int(rng.random() < spec.label_balance)
        lo, hi = _position_bounds(spec.position_policy, k)
        n_plant = min(max(2, round(spec.signal_density * k)), hi - lo + 1)
        positions = sorted(rng.choice(np.arange(lo, hi + 1), size=n_plant,
                                      replace=False).tolist())
        words = rng.choice(filler_words, size=k).tolist()
        planted = rng.choice(signal[label], size=n_plant).tolist()
        for pos, word in zip(positions, planted):
            words[pos - 1] = word
        split = "train" if i < n_train else ("valid" if i < n_train + n_valid else "test")
        doc_id = f"d{i:06d}"
        records.append(CorpusRecord(doc_id=doc_id, text=" ".join(words),
                                    label=label, split=split))
        manifest.append(ManifestEntry(doc_id=doc_id, label=label, length=k,
                                      positions=positions))
    return records, manifest, vocab


def bayes_label(text: str, spec: SyntheticSpec) -> int:
    """The oracle rule: which class's signal vocabulary appears in the text."""
    sig0, sig1 = (set(s) for s in signal_words(spec))
    words = set(text.split())
    has0, has1 = bool(words & sig0), bool(words & sig1)
    if has0 == has1:
        raise CorpusError("text does not carry exactly one class signal")
    return int(has1)


def write_jsonl(path, records: list[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def write_manifest(path, manifest: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in manifest:
            fh.write(m.to_json() + "\n")


def load_jsonl(path) -> list[CorpusRecord]:
    """Load one JSON object per line with fields id, text, and optionally
    label (0/1) and split; all malformed lines are reported by number."""
    text = Path(path).read_text(encoding="utf-8")
    records: list[CorpusRecord] = []
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
            problems.append(f"line {lineno}: missing required field 'id' or 'text'")
            continue
        label = obj.get("label")
        if label is not None and label not in (0, 1):
            problems.append(f"line {lineno}: label must be 0 or 1, got {label!r}")
            continue
        if not str(obj["text"]).strip():
            problems.append(f"line {lineno}: empty text")
            continue
        records.append(CorpusRecord(doc_id=str(obj["id"]), text=str(obj["text"]),
                                    label=label, split=str(obj.get("split", "train"))))
    if problems:
        shown = "; ".join(problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise CorpusError(f"{path}: {shown}{more}")
    if not records:
        raise CorpusError(f"{path}: no corpus records")
    return records


def middle_truncate(doc: TokenizedDocument, budget_chunks: int,
                    chunk_size: int) -> TokenizedDocument:
    """Drop middle chunks when the zero-overlap chunk count exceeds the budget.

    Keeps the first ``ceil(budget / 2)`` and last ``floor(budget / 2)``
    chunks' tokens, so heads and tails always survive. This mirrors the
    classic chunk-budgeted baseline that reads a bounded number of windows.
    """
    if budget_chunks < 2:
        raise CorpusError("truncation budget must be at least two chunks")
    n = chunk_count(doc.length, chunk_size, 0)
    if n <= budget_chunks:
        return doc
    head_chunks = -(budget_chunks // -2)
    tail_chunks = budget_chunks // 2
    head = doc.tokens[:head_chunks * chunk_size]
    tail_start = (n - tail_chunks) * chunk_size
    tail = doc.tokens[tail_start:]
    return TokenizedDocument(doc_id=doc.doc_id,
                             tokens=np.concatenate([head, tail]),
                             label=doc.label)


def head_truncate(doc: TokenizedDocument, budget_chunks: int,
                  chunk_size: int) -> TokenizedDocument:
    """Keep only the first ``budget_chunks`` chunks' tokens (conventional
    prefix truncation: everything past the budget is discarded)."""
    if budget_chunks < 1:
        raise CorpusError("truncation budget must be at least one chunk")
    limit = budget_chunks * chunk_size
    if doc.length <= limit:
        return doc
    return TokenizedDocument(doc_id=doc.doc_id, tokens=doc.tokens[:limit],
                             label=doc.label)
