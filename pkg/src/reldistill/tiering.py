"""Deployment-style scoring: scalar relevance scores, tier assignment, batch
filtering, and threshold calibration.

The scalar score is the expectation of the schema's default tiers under the
predicted class distribution, which keeps it inside [0, 4] and monotone in
the mass placed on high-relevance classes. Tier assignment counts calibrated
thresholds at or below the score (inclusive), so a score equal to a
threshold already reaches that tier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .schemas import LabeledPair, RelevanceSchema

NUM_THRESHOLDS = 4


@dataclass
class TierCalibration:
    """Ascending score thresholds for tiers 1..4 plus the filter cutoff."""

    thresholds: tuple[float, float, float, float]
    filter_below_tier: int = 2

    def __post_init__(self):
        if len(self.thresholds) != NUM_THRESHOLDS:
            raise ConfigurationError("exactly four thresholds are required")
        if any(b < a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ConfigurationError("thresholds must be non-decreasing")
        if not 0 <= self.filter_below_tier <= 4:
            raise ConfigurationError("filter_below_tier must lie in 0..4")

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "filter_below_tier": self.filter_below_tier,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TierCalibration":
        return cls(tuple(data["thresholds"]), data.get("filter_below_tier", 2))


def load_calibration(path: str | Path) -> TierCalibration:
    return TierCalibration.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_calibration(path: str | Path, calibration: TierCalibration) -> None:
    Path(path).write_text(
        json.dumps(calibration.to_dict(), indent=2) + "\n", encoding="utf-8"
    )


def relevance_score(probabilities: Sequence[float], schema: RelevanceSchema) -> float:
    """Expected default tier under the predicted distribution."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.shape != (schema.num_classes,):
        raise InputError(
            f"expected {schema.num_classes} probabilities, got shape {probs.shape}"
        )
    if abs(float(probs.sum()) - 1.0) > 1e-6 or (probs < -1e-12).any():
        raise InputError("probabilities must be non-negative and sum to 1")
    return float(probs @ np.asarray(schema.default_tiers, dtype=np.float64))


def score_to_tier(score: float, calibration: TierCalibration) -> int:
    """Number of thresholds at or below the score; total and monotone."""
    return sum(1 for t in calibration.thresholds if t <= score)


@dataclass
class FilterResult:
    kept: list[LabeledPair]
    audit: list[dict] = field(default_factory=list)  # id, score, tier, kept


def filter_batch(
    pairs: Sequence[LabeledPair],
    probabilities: np.ndarray,
    calibration: TierCalibration,
    schema: RelevanceSchema,
) -> FilterResult:
    """Keep pairs whose tier reaches the cutoff; audit every score and tier."""
    if len(pairs) != len(probabilities):
        raise InputError("pairs and probability rows must align")
    result = FilterResult(kept=[])
    for pair, probs in zip(pairs, probabilities):
        score = relevance_score(probs, schema)
        tier = score_to_tier(score, calibration)
        keep = tier >= calibration.filter_below_tier
        result.audit.append(
            {"id": pair.id, "score": score, "tier": tier, "kept": keep}
        )
        if keep:
            result.kept.append(pair)
    return result


def write_filter_audit(path: str | Path, result: FilterResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in result.audit:
            fh.write(json.dumps(row))
            fh.write("\n")


@dataclass
class CalibrationReport:
    requested_precision: tuple[float, float, float, float]
    achieved_precision: tuple[float | None, ...]
    unattainable_tiers: list[int]

    def to_dict(self) -> dict:
        return {
            "requested_precision": list(self.requested_precision),
            "achieved_precision": list(self.achieved_precision),
            "unattainable_tiers": self.unattainable_tiers,
        }


def calibrate_thresholds(
    scores: Sequence[float],
    true_tiers: Sequence[int],
    target_precision: float | Sequence[float],
    filter_below_tier: int = 2,
) -> tuple[TierCalibration, CalibrationReport]:
    """Pick minimal thresholds hitting a per-tier precision target.

    For each tier t the candidate thresholds are the observed score values;
    the smallest one whose "score >= threshold" set has precision (fraction
    with true tier >= t) at or above the target wins. Unattainable targets
    fall back to the best-achievable threshold and are flagged. Thresholds
    are forced non-decreasing afterwards.
    """
    scores = np.asarray(scores, dtype=np.float64)
    tiers = np.asarray(true_tiers, dtype=int)
    if scores.shape != tiers.shape or scores.size == 0:
        raise InputError("scores and true tiers must align and be non-empty")
    if isinstance(target_precision, (int, float)):
        targets = (float(target_precision),) * NUM_THRESHOLDS
    else:
        targets = tuple(float(t) for t in target_precision)
        if len(targets) != NUM_THRESHOLDS:
            raise InputError("provide one precision target per tier 1..4")

    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_hits = {}
    for t in range(1, NUM_THRESHOLDS + 1):
        hits = (tiers[order] >= t).astype(np.float64)
        # precision of {score >= sorted_scores[i]} is a suffix mean
        suffix = np.cumsum(hits[::-1])[::-1]
        counts = np.arange(len(hits), 0, -1)
        sorted_hits[t] = suffix / counts

    thresholds: list[float] = []
    achieved: list[float | None] = []
    unattainable: list[int] = []
    for t in range(1, NUM_THRESHOLDS + 1):
        precision = sorted_hits[t]
        feasible = np.nonzero(precision >= targets[t - 1])[0]
        if len(feasible):
            pick = int(feasible[0])  # minimal threshold achieving the target
        else:
            pick = int(np.argmax(precision))
            unattainable.append(t)
        thresholds.append(float(sorted_scores[pick]))
        achieved.append(float(precision[pick]))
    monotone = np.maximum.accumulate(thresholds)
    calibration = TierCalibration(tuple(monotone.tolist()), filter_below_tier)
    report = CalibrationReport(
        requested_precision=targets,
        achieved_precision=tuple(achieved),
        unattainable_tiers=unattainable,
    )
    return calibration, report
