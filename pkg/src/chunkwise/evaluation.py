"""Metrics and statistical machinery for model comparison.

Covers confusion counts, Macro-F1 and Matthews correlation with explicit
zero-denominator conventions, seeded percentile-bootstrap confidence
intervals, the Wilcoxon signed-rank test (exact for small samples, normal
approximation with tie correction otherwise), Holm's step-down multiple
comparison correction, equal-size length buckets, and the average-rank /
clique data behind critical-difference diagrams.

All functions are pure; bootstrap replicates draw from generators seeded
deterministically by (seed, replicate index), so serial and parallel
evaluation agree exactly.
"""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EvaluationError(ValueError):
    pass


class MetricUndefined(ArithmeticError):
    """A metric cannot be computed on this sample (e.g. one class only)."""


@dataclass(frozen=True)
class ConfusionCounts:
    """2x2 counts with class 1 ("reversed") as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class PredictionRecord:
    """One scored document, as written to a prediction dump."""

    doc_id: str
    n_tokens: int
    label: int
    prob: float
    pred: int
    model: str = ""


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    """Count TP/TN/FP/FN; labels and predictions must be 0/1 of equal length."""
    if len(predictions) != len(labels):
        raise EvaluationError(
            f"{len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise EvaluationError("empty evaluation set")
    tp = tn = fp = fn = 0
    for p, y in zip(predictions, labels):
        if y not in (0, 1) or p not in (0, 1):
            raise EvaluationError(f"labels and predictions must be 0/1, got ({p}, {y})")
        if y == 1:
            if p == 1:
                tp += 1
            else:
                fn += 1
        else:
            if p == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def _f1(tp: int, fp: int, fn: int) -> float:
    # A class absent from both predictions and truth is scored perfect;
    # zero-denominator precision/recall count as zero.
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(counts: ConfusionCounts) -> float:
    """Unweighted mean of the per-class F1 scores for classes {0, 1}."""
    if counts.total == 0:
        raise EvaluationError("empty evaluation set")
    f1_pos = _f1(counts.tp, counts.fp, counts.fn)
    f1_neg = _f1(counts.tn, counts.fn, counts.fp)
    return (f1_pos + f1_neg) / 2.0


def mcc(counts: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    if counts.total == 0:
        raise EvaluationError("empty evaluation set")
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def accuracy(counts: ConfusionCounts) -> float:
    return (counts.tp + counts.tn) / counts.total


def metric_on_records(records: Sequence[PredictionRecord],
                      metric: Callable[[ConfusionCounts], float],
                      strict_single_class: bool = False) -> float:
    labels = [r.label for r in records]
    if strict_single_class and len(set(labels)) < 2:
        raise MetricUndefined("sample contains a single actual class")
    return metric(confusion([r.pred for r in records], labels))


@dataclass(frozen=True)
class BootstrapInterval:
    lo: float
    hi: float
    redraws: int = 0

    def __iter__(self):
        return iter((self.lo, self.hi))


def bootstrap_ci(records: Sequence, metric: Callable[[Sequence], float],
                 n_resamples: int = 2000, level: float = 0.95,
                 seed: int = 0, max_redraws_per_resample: int = 1000) -> BootstrapInterval:
    """Seeded percentile bootstrap interval for ``metric`` over ``records``.

    Documents are resampled with replacement ``n_resamples`` times; the
    interval is the nearest-rank (1 - level)/2 and (1 + level)/2 quantiles
    of the replicate scores. A resample on which the metric raises
    :class:`MetricUndefined` is redrawn (from the same replicate stream),
    up to a cap; the total redraw count is reported on the result.
    """
    n = len(records)
    if n == 0:
        raise EvaluationError("bootstrap over an empty record set")
    if n_resamples < 1:
        raise EvaluationError("need at least one bootstrap resample")
    if not 0.0 < level < 1.0:
        raise EvaluationError(f"confidence level must lie in (0, 1), got {level}")
    as_array = isinstance(records, np.ndarray)
    scores = np.empty(n_resamples)
    redraws = 0
    for rep in range(n_resamples):
        rng = np.random.default_rng(np.random.SeedSequence((seed, rep)))
        for attempt in range(max_redraws_per_resample + 1):
            idx = rng.integers(0, n, size=n)
            try:
                scores[rep] = metric(records[idx] if as_array
                                     else [records[i] for i in idx])
                break
            except MetricUndefined:
                redraws += 1
        else:
            raise EvaluationError(
                f"metric undefined on {max_redraws_per_resample} consecutive "
                f"redraws of resample {rep}")
    scores.sort()
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    lo = scores[max(0, math.ceil(lo_q * n_resamples) - 1)]
    hi = scores[max(0, math.ceil(hi_q * n_resamples) - 1)]
    return BootstrapInterval(lo=float(lo), hi=float(hi), redraws=redraws)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired scores.

    Zero differences are dropped. Up to 20 informative pairs the null
    distribution is enumerated exactly over all sign assignments; beyond
    that a normal approximation with tie correction is used. If every
    difference is zero the samples are indistinguishable and p = 1.
    """
    if len(a) != len(b):
        raise EvaluationError(f"paired samples of lengths {len(a)} and {len(b)}")
    diffs = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    diffs = diffs[diffs != 0.0]
    m = diffs.size
    if m == 0:
        return 1.0
    ranks = _average_ranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if m <= 20:
        return _wilcoxon_exact_p(ranks, w_plus)
    return _wilcoxon_normal_p(ranks, w_plus)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _wilcoxon_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    # Work in doubled-rank integers so tied (half-integer) ranks stay exact.
    r2 = np.rint(ranks * 2).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        counts[r:] += counts[:counts.size - r].copy()
    n_assignments = 2.0 ** len(r2)
    w2 = int(round(w_plus * 2))
    tail_ge = counts[w2:].sum() / n_assignments
    tail_le = counts[:w2 + 1].sum() / n_assignments
    return min(1.0, 2.0 * min(tail_ge, tail_le))


def _wilcoxon_normal_p(ranks: np.ndarray, w_plus: float) -> float:
    m = ranks.size
    mean = m * (m + 1) / 4.0
    var = m * (m + 1) * (2 * m + 1) / 24.0
    # tie correction: subtract sum(t^3 - t) / 48 over groups of tied ranks
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var -= float(((tie_sizes ** 3 - tie_sizes) / 48.0).sum())
    if var <= 0:
        return 1.0
    dev = w_plus - mean
    dev -= 0.5 * np.sign(dev)  # continuity correction toward the mean
    z = dev / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


def holm_correct(pvals: Sequence[float], alpha: float = 0.05) -> list[bool]:
    """Step-down Holm decisions, returned in the input order.

    Ascending p-values are rejected while p_(i) <= alpha / (m - i + 1);
    the first failure stops all later rejections.
    """
    if not 0.0 < alpha < 1.0:
        raise EvaluationError(f"alpha must lie in (0, 1), got {alpha}")
    m = len(pvals)
    if m < 1:
        raise EvaluationError("no p-values to correct")
    for p in pvals:
        if not 0.0 <= p <= 1.0:
            raise EvaluationError(f"p-value {p} outside [0, 1]")
    order = sorted(range(m), key=lambda i: pvals[i])
    decisions = [False] * m
    for pos, idx in enumerate(order):
        if pvals[idx] <= alpha / (m - pos):
            decisions[idx] = True
        else:
            break
    return decisions


@dataclass
class SliceReport:
    """Metrics (optionally with bootstrap CIs) for one document set."""

    n_documents: int
    counts: ConfusionCounts
    macro_f1: float
    mcc: float
    mean_tokens: float
    macro_f1_ci: BootstrapInterval | None = None
    mcc_ci: BootstrapInterval | None = None

    def to_dict(self) -> dict:
        out = {
            "n_documents": self.n_documents,
            "counts": {"tp": self.counts.tp, "tn": self.counts.tn,
                       "fp": self.counts.fp, "fn": self.counts.fn},
            "macro_f1": self.macro_f1,
            "mcc": self.mcc,
            "mean_tokens": self.mean_tokens,
        }
        if self.macro_f1_ci is not None:
            out["macro_f1_ci"] = [self.macro_f1_ci.lo, self.macro_f1_ci.hi]
            out["mcc_ci"] = [self.mcc_ci.lo, self.mcc_ci.hi]
        return out


@dataclass
class EvaluationReport:
    overall: SliceReport
    buckets: list[SliceReport] = field(default_factory=list)
    slices: dict[str, SliceReport] = field(default_factory=dict)
    bootstrap: dict | None = None

    def to_dict(self) -> dict:
        out = {"overall": self.overall.to_dict()}
        if self.buckets:
            out["buckets"] = [b.to_dict() for b in self.buckets]
        if self.slices:
            out["slices"] = {k: v.to_dict() for k, v in self.slices.items()}
        if self.bootstrap:
            out["bootstrap"] = self.bootstrap
        return out


def _slice_report(records: Sequence[PredictionRecord], n_resamples: int | None,
                  level: float, seed: int) -> SliceReport:
    counts = confusion([r.pred for r in records], [r.label for r in records])
    report = SliceReport(
        n_documents=len(records),
        counts=counts,
        macro_f1=macro_f1(counts),
        mcc=mcc(counts),
        mean_tokens=float(np.mean([r.n_tokens for r in records])),
    )
    if n_resamples:
        # Single-class resamples are redrawn, except when the slice itself
        # is single-class (tiny length slices): then the zero-denominator
        # conventions are the only meaningful reading and redrawing could
        # never terminate.
        strict = len({r.label for r in records}) >= 2
        report.macro_f1_ci = bootstrap_ci(
            records, lambda rs: metric_on_records(rs, macro_f1, strict_single_class=strict),
            n_resamples=n_resamples, level=level, seed=seed)
        report.mcc_ci = bootstrap_ci(
            records, lambda rs: metric_on_records(rs, mcc, strict_single_class=strict),
            n_resamples=n_resamples, level=level, seed=seed)
    return report


def sort_by_length(records: Sequence[PredictionRecord]) -> list[PredictionRecord]:
    """Ascending token length, ties broken by document id."""
    return sorted(records, key=lambda r: (r.n_tokens, r.doc_id))


def longest_fraction(records: Sequence[PredictionRecord],
                     fraction: float) -> list[PredictionRecord]:
    """The ceil(fraction * N) longest documents."""
    if not 0.0 < fraction <= 1.0:
        raise EvaluationError(f"fraction must lie in (0, 1], got {fraction}")
    take = math.ceil(fraction * len(records))
    return sort_by_length(records)[len(records) - take:]


def length_buckets(records: Sequence[PredictionRecord], n_buckets: int,
                   n_resamples: int | None = None, level: float = 0.95,
                   seed: int = 0) -> list[SliceReport]:
    """Equal-size groups by ascending length, remainder spread over the
    longest groups; each group gets its own metrics and intervals."""
    if n_buckets < 1:
        raise EvaluationError("need at least one bucket")
    if n_buckets > len(records):
        raise EvaluationError(
            f"{n_buckets} buckets but only {len(records)} documents")
    ordered = sort_by_length(records)
    base, rem = divmod(len(ordered), n_buckets)
    sizes = [base] * (n_buckets - rem) + [base + 1] * rem
    reports = []
    offset = 0
    for i, size in enumerate(sizes):
        group = ordered[offset:offset + size]
        offset += size
        reports.append(_slice_report(group, n_resamples, level, seed + i))
    return reports


def evaluate_records(records: Sequence[PredictionRecord],
                     n_resamples: int | None = 2000, level: float = 0.95,
                     seed: int = 0, n_buckets: int | None = None,
                     slice_fractions: Sequence[float] = ()) -> EvaluationReport:
    """Full report: overall metrics, bootstrap CIs, optional length buckets
    and longest-fraction slices."""
    if not records:
        raise EvaluationError("no records to evaluate")
    report = EvaluationReport(
        overall=_slice_report(records, n_resamples, level, seed))
    if n_buckets:
        report.buckets = length_buckets(records, n_buckets, n_resamples, level, seed)
    for fraction in slice_fractions:
        subset = longest_fraction(records, fraction)
        report.slices[f"{fraction:g}"] = _slice_report(subset, n_resamples, level, seed)
    if n_resamples:
        report.bootstrap = {"n_resamples": n_resamples, "level": level, "seed": seed}
    return report


@dataclass
class CDRanking:
    """Average ranks plus pairwise significance decisions.

    ``cliques`` lists the maximal model sets with no significant pairwise
    difference (the connecting bars of a critical-difference diagram).
    """

    models: list[str]
    avg_ranks: dict[str, float]
    p_values: dict[tuple[str, str], float]
    rejected: dict[tuple[str, str], bool]
    cliques: list[tuple[str, ...]]
    alpha: float

    def to_dict(self) -> dict:
        return {
            "models": self.models,
            "avg_ranks": self.avg_ranks,
            "p_values": {f"{a}|{b}": p for (a, b), p in self.p_values.items()},
            "rejected": {f"{a}|{b}": r for (a, b), r in self.rejected.items()},
            "cliques": [list(c) for c in self.cliques],
            "alpha": self.alpha,
        }


def cd_ranking(scores: dict[str, Sequence[float]], alpha: float = 0.05) -> CDRanking:
    """Critical-difference data for models scored on shared paired samples.

    Per sample, models are ranked 1 = best (ties get the average rank);
    ranks are averaged per model. All pairs are tested with the Wilcoxon
    signed-rank test, Holm-corrected at ``alpha``.
    """
    models = list(scores)
    if len(models) < 2:
        raise EvaluationError("need at least two models to rank")
    lengths = {len(scores[m]) for m in models}
    if len(lengths) != 1:
        raise EvaluationError(f"models scored on different sample counts: {lengths}")
    n_samples = lengths.pop()
    if n_samples < 2:
        raise EvaluationError("need at least two paired samples")
    matrix = np.asarray([scores[m] for m in models], dtype=float)
    ranks = np.empty_like(matrix)
    for j in range(n_samples):
        ranks[:, j] = _average_ranks(-matrix[:, j])
    avg_ranks = {m: float(ranks[i].mean()) for i, m in enumerate(models)}

    pairs = [(models[i], models[j]) for i in range(len(models))
             for j in range(i + 1, len(models))]
    pvals = [wilcoxon_signed_rank(scores[a], scores[b]) for a, b in pairs]
    decisions = holm_correct(pvals, alpha)
    p_values = dict(zip(pairs, pvals))
    rejected = dict(zip(pairs, decisions))

    cliques = _maximal_cliques(models, rejected)
    order = sorted(models, key=lambda m: avg_ranks[m])
    cliques = sorted({tuple(sorted(c, key=lambda m: avg_ranks[m])) for c in cliques},
                     key=lambda c: [avg_ranks[m] for m in c])
    return CDRanking(models=order, avg_ranks=avg_ranks, p_values=p_values,
                     rejected=rejected, cliques=list(cliques), alpha=alpha)


def _maximal_cliques(models: list[str],
                     rejected: dict[tuple[str, str], bool]) -> list[tuple[str, ...]]:
    """Bron-Kerbosch over the 'no significant difference' graph."""
    linked = {m: set() for m in models}
    for (a, b), rej in rejected.items():
        if not rej:
            linked[a].add(b)
            linked[b].add(a)
    out: list[tuple[str, ...]] = []

    def expand(r: set, p: set, x: set) -> None:
        if not p and not x:
            out.append(tuple(sorted(r)))
            return
        pivot = max(p | x, key=lambda m: len(linked[m]))
        for v in list(p - linked[pivot]):
            expand(r | {v}, p & linked[v], x & linked[v])
            p.remove(v)
            x.add(v)

    expand(set(), set(models), set())
    return out


def bootstrap_metric_scores(per_model_records: dict[str, Sequence[PredictionRecord]],
                            metric: Callable[[ConfusionCounts], float],
                            n_resamples: int, seed: int = 0) -> dict[str, list[float]]:
    """Per-replicate metric scores on resample indices shared across models.

    This is the paired sample that feeds the signed-rank tests: every
    model is scored on exactly the same bootstrap resamples of the shared
    test set, aligned by document id.
    """
    models = list(per_model_records)
    if len(models) < 2:
        raise EvaluationError("need at least two models to compare")
    by_id = {m: {r.doc_id: r for r in per_model_records[m]} for m in models}
    ids = sorted(by_id[models[0]])
    for m in models[1:]:
        if sorted(by_id[m]) != ids:
            raise EvaluationError(
                f"model {m!r} scored a different document set; dumps must cover "
                f"identical documents")
    aligned = {m: [by_id[m][i] for i in ids] for m in models}
    n = len(ids)
    scores: dict[str, list[float]] = {m: [] for m in models}
    for rep in range(n_resamples):
        rng = np.random.default_rng(np.random.SeedSequence((seed, rep)))
        idx = rng.integers(0, n, size=n)
        for m in models:
            recs = [aligned[m][i] for i in idx]
            scores[m].append(metric_on_records(recs, metric))
    return scores


def write_predictions(path, records: Sequence[PredictionRecord]) -> None:
    """One JSON record per line: id, token count, gold label, probability,
    predicted label, model name."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.doc_id, "n_tokens": r.n_tokens, "label": r.label,
                "prob": r.prob, "pred": r.pred, "model": r.model,
            }, sort_keys=True) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(PredictionRecord(
                doc_id=str(obj["id"]), n_tokens=int(obj["n_tokens"]),
                label=int(obj["label"]), prob=float(obj["prob"]),
                pred=int(obj["pred"]), model=str(obj.get("model", ""))))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise EvaluationError(f"{path}:{lineno}: bad prediction record ({exc})")
    if not records:
        raise EvaluationError(f"{path}: no prediction records")
    return records
