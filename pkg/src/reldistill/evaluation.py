"""Metrics, the multi-perspective oracle analysis, the per-perspective
accuracy heatmap, keyword probing of frozen representations, and the
parameter/latency audit.

Everything here reads frozen artifacts; nothing trains the student.
"""

from __future__ import annotations

import time
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from scipy import stats

from .encoder import batch_pairs, tokenize_text
from .errors import InputError
from .hashing import child_rng
from .schemas import PERSPECTIVES, LabeledPair, Perspective, RelevanceSchema
from .teacher import GenerationRecord

# Fixed function-word list for probe vocabulary filtering. Reasoning-flavored
# function words ("mentions", "implies", "likely") are deliberately absent:
# they are signal, not noise.
DEFAULT_STOPWORDS = frozenset(
    "the a an and or but if then so of to in on for with as at by from that "
    "this these those it its is are was were be been being has have had do "
    "does did not no over about into after before between per via such "
    "because".split()
)
assert len(DEFAULT_STOPWORDS) == 50


# --------------------------------------------------------------------------
# Classification metrics
# --------------------------------------------------------------------------


@dataclass
class PerClassStats:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricReport:
    accuracy: float
    macro_f1: float
    per_class: list[PerClassStats]
    zero_support_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": [vars(s) for s in self.per_class],
            "zero_support_classes": self.zero_support_classes,
        }


def metrics(
    preds: Sequence[int], labels: Sequence[int], schema: RelevanceSchema
) -> MetricReport:
    """Counting-based accuracy and macro-F1.

    Zero-support classes contribute an F1 of 0 to the macro average and are
    flagged by name.
    """
    if len(preds) != len(labels):
        raise InputError("preds and labels must have equal length")
    C = schema.num_classes
    tp = [0] * C
    pred_count = [0] * C
    support = [0] * C
    correct = 0
    for pred, label in zip(preds, labels):
        if not (0 <= pred < C and 0 <= label < C):
            raise InputError("prediction or label outside the schema")
        pred_count[pred] += 1
        support[label] += 1
        if pred == label:
            tp[label] += 1
            correct += 1
    per_class = []
    zero_support = []
    for c in range(C):
        precision = tp[c] / pred_count[c] if pred_count[c] else 0.0
        recall = tp[c] / support[c] if support[c] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(PerClassStats(precision, recall, f1, support[c]))
        if support[c] == 0:
            zero_support.append(schema.class_name(c))
    accuracy = correct / len(preds) if preds else 0.0
    macro_f1 = sum(s.f1 for s in per_class) / C
    return MetricReport(accuracy, macro_f1, per_class, zero_support)


# --------------------------------------------------------------------------
# Multi-perspective oracle / pass@k analysis
# --------------------------------------------------------------------------


@dataclass
class OracleReport:
    """Pilot-style accounting: one shot per perspective versus retries of one."""

    oracle_acc: float
    per_perspective_pass1: dict[str, float]
    best_perspective: str
    best_single_passk: float
    k: int

    def to_dict(self) -> dict:
        return vars(self).copy()


def oracle_report(
    attempts_by_perspective: Mapping[Perspective, Sequence[Sequence[int]]],
    labels: Sequence[int],
    k: int,
) -> OracleReport:
    """Compare the any-perspective oracle against single-perspective retries.

    The oracle counts a pair as solved when attempt 0 of any perspective is
    correct; ``best_single_passk`` counts pairs where any of the first ``k``
    attempts of the best pass@1 perspective is correct.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    if not attempts_by_perspective:
        raise InputError("need at least one perspective")
    n = len(labels)
    for perspective, rows in attempts_by_perspective.items():
        if len(rows) != n:
            raise InputError(f"{perspective.value}: attempt rows do not match labels")
        if any(len(row) < k for row in rows):
            raise InputError(f"{perspective.value}: fewer than {k} attempts for some pair")

    perspectives = [p for p in PERSPECTIVES if p in attempts_by_perspective]
    oracle_hits = 0
    pass1 = {}
    for p in perspectives:
        rows = attempts_by_perspective[p]
        pass1[p.value] = sum(rows[i][0] == labels[i] for i in range(n)) / n
    for i in range(n):
        if any(attempts_by_perspective[p][i][0] == labels[i] for p in perspectives):
            oracle_hits += 1
    best = max(perspectives, key=lambda p: (pass1[p.value], -perspectives.index(p)))
    best_rows = attempts_by_perspective[best]
    passk_hits = sum(
        any(best_rows[i][a] == labels[i] for a in range(k)) for i in range(n)
    )
    return OracleReport(
        oracle_acc=oracle_hits / n,
        per_perspective_pass1=pass1,
        best_perspective=best.value,
        best_single_passk=passk_hits / n,
        k=k,
    )


def attempts_from_records(
    records: Sequence[GenerationRecord],
    pairs: Sequence[LabeledPair],
) -> dict[Perspective, list[list[int]]]:
    """Arrange generation records into per-perspective attempt grids."""
    index: dict[tuple[str, Perspective], dict[int, int]] = {}
    for record in records:
        index.setdefault((record.pair_id, record.perspective), {})[record.attempt] = (
            record.predicted_label
        )
    out: dict[Perspective, list[list[int]]] = {}
    for perspective in PERSPECTIVES:
        rows = []
        for pair in pairs:
            cell = index.get((pair.id, perspective), {})
            rows.append([cell[a] for a in sorted(cell)])
        if any(rows):
            out[perspective] = rows
    return out


# --------------------------------------------------------------------------
# Perspective-by-class heatmap
# --------------------------------------------------------------------------


@dataclass
class HeatmapResult:
    grid: np.ndarray  # (3, C) accuracy, NaN where no support
    support: np.ndarray  # (3, C) record counts
    no_support_cells: list[tuple[str, str]]


def perspective_heatmap(
    pairs: Sequence[LabeledPair],
    records: Sequence[GenerationRecord],
    schema: RelevanceSchema,
) -> HeatmapResult:
    """Empirical per-(perspective, class) accuracy over all attempts."""
    truth = {pair.id: pair.label for pair in pairs}
    C = schema.num_classes
    hits = np.zeros((len(PERSPECTIVES), C))
    support = np.zeros((len(PERSPECTIVES), C), dtype=int)
    rows = {p: i for i, p in enumerate(PERSPECTIVES)}
    for record in records:
        label = truth.get(record.pair_id)
        if label is None:
            continue
        i = rows[record.perspective]
        support[i, label] += 1
        if record.valid and record.predicted_label == label:
            hits[i, label] += 1
    with np.errstate(invalid="ignore"):
        grid = np.where(support > 0, hits / np.maximum(support, 1), np.nan)
    missing = [
        (p.value, schema.class_name(c))
        for p in PERSPECTIVES
        for c in range(C)
        if support[rows[p], c] == 0
    ]
    return HeatmapResult(grid=grid, support=support, no_support_cells=missing)


def save_heatmap_csv(path: str | Path, result: HeatmapResult, schema: RelevanceSchema) -> None:
    lines = ["perspective," + ",".join(schema.classes)]
    for i, perspective in enumerate(PERSPECTIVES):
        cells = [
            "" if np.isnan(result.grid[i, c]) else f"{result.grid[i, c]:.6f}"
            for c in range(schema.num_classes)
        ]
        lines.append(perspective.value + "," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_heatmap_png(path: str | Path, result: HeatmapResult, schema: RelevanceSchema) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(1.6 + schema.num_classes, 3.2))
    image = ax.imshow(result.grid, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(schema.num_classes), schema.classes, rotation=30, ha="right")
    ax.set_yticks(range(len(PERSPECTIVES)), [p.value for p in PERSPECTIVES])
    for i in range(result.grid.shape[0]):
        for j in range(result.grid.shape[1]):
            if not np.isnan(result.grid[i, j]):
                ax.text(j, i, f"{result.grid[i, j]:.2f}", ha="center", va="center",
                        color="white", fontsize=8)
    fig.colorbar(image, ax=ax, label="accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --------------------------------------------------------------------------
# Keyword probing
# --------------------------------------------------------------------------


@dataclass
class ProbeResult:
    keyword: str
    f1_latent: float
    f1_cls: float
    p_value: float

    def to_dict(self) -> dict:
        return vars(self).copy()


@dataclass
class ProbeStudyResult:
    results: list[ProbeResult]
    keywords: list[str]
    mean_f1_latent: float
    mean_f1_cls: float
    p_value: float  # paired over run-level mean F1 gaps
    wins_latent: int

    def to_dict(self) -> dict:
        return {
            "results": [r.to_dict() for r in self.results],
            "keywords": self.keywords,
            "mean_f1_latent": self.mean_f1_latent,
            "mean_f1_cls": self.mean_f1_cls,
            "p_value": self.p_value,
            "wins_latent": self.wins_latent,
        }


def probe_vocabulary(
    pairs: Sequence[LabeledPair],
    cots: Sequence[str],
    top_n: int,
    stopwords: frozenset[str] = DEFAULT_STOPWORDS,
    df_threshold: float = 0.01,
) -> list[str]:
    """Top rationale keywords that never lean on the pair text.

    Tokens occurring in at least ``df_threshold`` of the corpus's query/title
    documents are excluded, as are stopwords; the rest rank by rationale
    document frequency with an alphabetical tie-break.
    """
    if top_n < 1:
        raise InputError("top_n must be >= 1")
    pair_df: Counter[str] = Counter()
    for pair in pairs:
        pair_df.update(set(tokenize_text(pair.query) + tokenize_text(pair.title)))
    banned = {t for t, c in pair_df.items() if c / max(len(pairs), 1) >= df_threshold}
    cot_df: Counter[str] = Counter()
    for cot in cots:
        cot_df.update(set(tokenize_text(cot)))
    candidates = sorted(
        ((t, c) for t, c in cot_df.items() if t not in stopwords and t not in banned),
        key=lambda tc: (-tc[1], tc[0]),
    )
    if len(candidates) < top_n:
        warnings.warn(
            f"only {len(candidates)} probe keywords survive filtering "
            f"(asked for {top_n})"
        )
    return [t for t, _ in candidates[:top_n]]


def _binary_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def _probe_f1(
    features: np.ndarray,
    target: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    iters: int = 300,
    lr: float = 0.5,
    l2: float = 1e-4,
) -> float:
    """Train a linear-logistic probe by full-batch gradient descent.

    Deterministic: zero initialization, fixed iteration count, no sampling.
    """
    X_train, X_test = features[train_idx], features[test_idx]
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0) + 1e-8
    X_train = (X_train - mean) / std
    X_test = (X_test - mean) / std
    y = target[train_idx].astype(np.float64)
    w = np.zeros(X_train.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iters):
        z = np.clip(X_train @ w + b, -30.0, 30.0)
        p = 1.0 / (1.0 + np.exp(-z))
        grad = p - y
        w -= lr * (X_train.T @ grad / n + l2 * w)
        b -= lr * float(grad.mean())
    scores = X_test @ w + b
    return _binary_f1(target[test_idx], (scores >= 0).astype(int))


def probe_study(
    pairs: Sequence[LabeledPair],
    cots: Sequence[str],
    latent_vectors: np.ndarray,
    cls_vectors: np.ndarray,
    top_n: int = 15,
    runs: int = 10,
    seed: int = 0,
    test_fraction: float = 1 / 3,
) -> ProbeStudyResult:
    """Can a linear probe read rationale keywords off frozen representations?

    For each surviving keyword the binary target is its presence in the
    pair's rationale. Each run re-seeds the train/test split; both
    representations share the split, so the per-keyword t-test is paired.
    """
    if runs < 2:
        raise InputError("runs must be >= 2 for a paired test")
    if not (len(pairs) == len(cots) == len(latent_vectors) == len(cls_vectors)):
        raise InputError("pairs, cots, and representation tables must align")
    keywords = probe_vocabulary(pairs, cots, top_n)
    cot_tokens = [set(tokenize_text(cot)) for cot in cots]
    targets = {
        kw: np.array([1 if kw in doc else 0 for doc in cot_tokens]) for kw in keywords
    }
    n = len(pairs)
    n_test = max(1, int(round(n * test_fraction)))
    f1_latent = {kw: [] for kw in keywords}
    f1_cls = {kw: [] for kw in keywords}
    for run in range(runs):
        perm = child_rng(seed, "probe-run", run).permutation(n)
        test_idx, train_idx = perm[:n_test], perm[n_test:]
        for kw in keywords:
            target = targets[kw]
            f1_latent[kw].append(_probe_f1(latent_vectors, target, train_idx, test_idx))
            f1_cls[kw].append(_probe_f1(cls_vectors, target, train_idx, test_idx))

    results = []
    for kw in keywords:
        latent_runs = np.array(f1_latent[kw])
        cls_runs = np.array(f1_cls[kw])
        if np.allclose(latent_runs, cls_runs):
            p_value = 1.0
        else:
            p_value = float(stats.ttest_rel(latent_runs, cls_runs).pvalue)
        results.append(
            ProbeResult(kw, float(latent_runs.mean()), float(cls_runs.mean()), p_value)
        )
    run_mean_latent = np.array([np.mean([f1_latent[kw][r] for kw in keywords]) for r in range(runs)])
    run_mean_cls = np.array([np.mean([f1_cls[kw][r] for kw in keywords]) for r in range(runs)])
    if np.allclose(run_mean_latent, run_mean_cls):
        overall_p = 1.0
    else:
        overall_p = float(stats.ttest_rel(run_mean_latent, run_mean_cls).pvalue)
    return ProbeStudyResult(
        results=results,
        keywords=keywords,
        mean_f1_latent=float(run_mean_latent.mean()),
        mean_f1_cls=float(run_mean_cls.mean()),
        p_value=overall_p,
        wins_latent=sum(1 for r in results if r.f1_latent > r.f1_cls),
    )


def save_probe_csv(path: str | Path, study: ProbeStudyResult) -> None:
    lines = ["keyword,f1_latent,f1_cls,p_value"]
    for r in study.results:
        lines.append(f"{r.keyword},{r.f1_latent:.6f},{r.f1_cls:.6f},{r.p_value:.6g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_probe_png(path: str | Path, study: ProbeStudyResult) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    keywords = [r.keyword for r in study.results]
    x = np.arange(len(keywords))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6.0, 0.55 * len(keywords)), 3.6))
    ax.bar(x - width / 2, [r.f1_latent for r in study.results], width, label="latent vector")
    ax.bar(x + width / 2, [r.f1_cls for r in study.results], width, label="pooled vector")
    ax.set_xticks(x, keywords, rotation=45, ha="right")
    ax.set_ylabel("probe F1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# --------------------------------------------------------------------------
# Parameter and latency audit
# --------------------------------------------------------------------------


@dataclass
class EfficiencyReport:
    param_count: int
    param_delta_vs_baseline: int
    mean_latency_ms: float
    latencies_ms: list[float]

    def to_dict(self) -> dict:
        return vars(self).copy()


def efficiency_audit(
    checkpoint_path: str | Path,
    pairs: Sequence[LabeledPair],
    repeats: int = 10,
    warmups: int = 3,
) -> EfficiencyReport:
    """Parameter counts from the tensor catalog plus timed forward passes.

    The parameter delta is the extractor's share: the no-extractor ablation
    reports zero. Latency is the mean of ``repeats`` timed passes after
    ``warmups`` untimed ones on the given batch.
    """
    from .training import load_checkpoint, parameter_groups

    if repeats < 1:
        raise InputError("repeats must be >= 1")
    loaded = load_checkpoint(checkpoint_path)
    total = sum(
        int(np.prod(entry["shape"])) for entry in loaded.manifest["tensors"]
    )
    delta = parameter_groups(loaded.model)["extractor"]
    config = loaded.config
    batch = batch_pairs(pairs, config.max_input_tokens, config.encoder.vocab_buckets)
    latencies = []
    with torch.no_grad():
        for _ in range(warmups):
            loaded.model(batch.token_ids, batch.attention_mask)
        for _ in range(repeats):
            start = time.perf_counter()
            loaded.model(batch.token_ids, batch.attention_mask)
            latencies.append((time.perf_counter() - start) * 1000.0)
    return EfficiencyReport(
        param_count=total,
        param_delta_vs_baseline=delta,
        mean_latency_ms=float(np.mean(latencies)),
        latencies_ms=latencies,
    )
