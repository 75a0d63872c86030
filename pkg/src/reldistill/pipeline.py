"""Teacher-data machinery: consistency filtering, aggregation, sequence NLL,
conflict mining, cross-perspective preference construction, and the pairwise
log-sigmoid preference loss.

Everything here is a pure function over records and scalar log-probabilities
so the same math serves the simulator, an external service, or any pluggable
sequence scorer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DatasetParseError,
    DegenerateInputError,
    InputError,
    ReferentialIntegrityError,
    ValidationError,
)
from .schemas import PERSPECTIVES, LabeledPair, Perspective, RelevanceSchema
from .teacher import GenerationRecord

PASS_ATTEMPTS = 5  # attempts considered per perspective when sourcing a chosen rationale


@dataclass(frozen=True)
class SftExample:
    """A retained (query, title, rationale, label) training row."""

    pair_id: str
    query: str
    title: str
    rationale: str
    label: int
    source_perspective: Perspective


@dataclass(frozen=True)
class LabeledRationale:
    rationale: str
    label: int


@dataclass(frozen=True)
class PreferencePair:
    """A chosen/rejected rationale pair mined from a conflicting sample."""

    pair_id: str
    query: str
    title: str
    chosen: LabeledRationale
    rejected: LabeledRationale
    chosen_perspective: Perspective
    rejected_perspective: Perspective
    chosen_logprob: float | None = None
    rejected_logprob: float | None = None


@dataclass(frozen=True)
class SequenceScore:
    """Scalar sequence scores for one preference pair under a policy.

    Reference offsets default to zero so the plain score difference is the
    margin; a non-trivial reference policy can fill them in.
    """

    pair_id: str
    logprob_chosen: float
    logprob_rejected: float
    ref_logprob_chosen: float = 0.0
    ref_logprob_rejected: float = 0.0

    def __post_init__(self):
        values = (
            self.logprob_chosen,
            self.logprob_rejected,
            self.ref_logprob_chosen,
            self.ref_logprob_rejected,
        )
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"scores for {self.pair_id!r} must be finite")


@dataclass
class PreferenceBuildReport:
    """Counts of emitted and skipped candidates, by reason."""

    emitted: int = 0
    skipped_no_correct_rationale: int = 0
    skipped_invalid_greedy: int = 0

    def to_dict(self) -> dict:
        return {
            "emitted": self.emitted,
            "skipped_no_correct_rationale": self.skipped_no_correct_rationale,
            "skipped_invalid_greedy": self.skipped_invalid_greedy,
        }


def _pairs_by_id(pairs: Sequence[LabeledPair]) -> dict[str, LabeledPair]:
    return {pair.id: pair for pair in pairs}


def consistency_filter(
    pairs: Sequence[LabeledPair],
    gens: Sequence[GenerationRecord],
    perspective: Perspective,
) -> list[SftExample]:
    """Keep exactly the generations whose prediction matches ground truth.

    Only records for ``perspective`` are considered; flagged-invalid records
    are dropped. Output order follows the input record order.
    """
    by_id = _pairs_by_id(pairs)
    kept = []
    for record in gens:
        if record.perspective is not perspective:
            continue
        pair = by_id.get(record.pair_id)
        if pair is None:
            raise ReferentialIntegrityError(
                f"generation references unknown pair {record.pair_id!r}"
            )
        if record.valid and record.predicted_label == pair.label:
            kept.append(
                SftExample(
                    pair_id=pair.id,
                    query=pair.query,
                    title=pair.title,
                    rationale=record.rationale,
                    label=pair.label,
                    source_perspective=perspective,
                )
            )
    return kept


def aggregate_sft(per_perspective: Sequence[list[SftExample]]) -> list[SftExample]:
    """Multiset union of the per-perspective sets, order preserved.

    No deduplication: a pair retained under all three perspectives appears
    three times with distinct rationales.
    """
    merged = []
    for examples in per_perspective:
        merged.extend(examples)
    return merged


def sft_nll(token_logprobs: Sequence[float], target_mask: Sequence[int]) -> float:
    """Negative log-likelihood of the masked response tokens (sum reduction)."""
    if len(token_logprobs) != len(target_mask):
        raise InputError("token_logprobs and target_mask must have equal length")
    if not any(target_mask):
        raise DegenerateInputError("target mask selects no tokens")
    total = 0.0
    for logprob, flag in zip(token_logprobs, target_mask):
        if flag:
            if not math.isfinite(logprob):
                raise ValidationError("masked log-probabilities must be finite")
            total -= logprob
    return total


def sft_nll_batch(examples: Iterable[tuple[Sequence[float], Sequence[int]]]) -> float:
    """Mean of per-example sums over a batch."""
    totals = [sft_nll(logprobs, mask) for logprobs, mask in examples]
    if not totals:
        raise DegenerateInputError("empty batch")
    return sum(totals) / len(totals)


def mine_conflicts(
    pairs: Sequence[LabeledPair],
    per_perspective_predictions: Mapping[Perspective, Mapping[str, int]],
) -> list[LabeledPair]:
    """Pairs misclassified by at least one perspective (union of error sets)."""
    if not per_perspective_predictions:
        return []
    for perspective, predictions in per_perspective_predictions.items():
        for pair in pairs:
            if pair.id not in predictions:
                raise ReferentialIntegrityError(
                    f"perspective {perspective.value} has no prediction for "
                    f"pair {pair.id!r}"
                )
    return [
        pair
        for pair in pairs
        if any(
            predictions[pair.id] != pair.label
            for predictions in per_perspective_predictions.values()
        )
    ]


def greedy_predictions(
    gens: Sequence[GenerationRecord],
    perspectives: Sequence[Perspective] = PERSPECTIVES,
) -> dict[Perspective, dict[str, int]]:
    """Attempt-0 predictions per perspective (greedy decode convention)."""
    out: dict[Perspective, dict[str, int]] = {p: {} for p in perspectives}
    for record in gens:
        if record.attempt == 0 and record.perspective in out:
            out[record.perspective][record.pair_id] = record.predicted_label
    return out


def build_preference_pairs(
    conflicts: Sequence[LabeledPair],
    gens: Sequence[GenerationRecord],
) -> tuple[list[PreferencePair], PreferenceBuildReport]:
    """One preference pair per failing perspective of each conflicting sample.

    The rejected member is the failing perspective's greedy (attempt-0)
    rationale; the chosen member is the first correct rationale found by
    scanning perspectives in canonical order and attempts 0..4 in ascending
    index. Samples with no correct rationale anywhere are skipped and
    counted, never raised.
    """
    indexed: dict[str, dict[Perspective, dict[int, GenerationRecord]]] = {}
    for record in gens:
        indexed.setdefault(record.pair_id, {}).setdefault(record.perspective, {})[
            record.attempt
        ] = record

    pairs_out: list[PreferencePair] = []
    report = PreferenceBuildReport()
    for pair in conflicts:
        per_perspective = indexed.get(pair.id)
        if per_perspective is None:
            raise ReferentialIntegrityError(f"no generations for conflict pair {pair.id!r}")
        chosen = None
        for perspective in PERSPECTIVES:
            attempts = per_perspective.get(perspective, {})
            for attempt in range(PASS_ATTEMPTS):
                record = attempts.get(attempt)
                if record is not None and record.valid and record.predicted_label == pair.label:
                    chosen = record
                    break
            if chosen is not None:
                break
        failing = []
        for perspective in PERSPECTIVES:
            greedy = per_perspective.get(perspective, {}).get(0)
            if greedy is None:
                raise ReferentialIntegrityError(
                    f"pair {pair.id!r} has no attempt-0 record for "
                    f"perspective {perspective.value}"
                )
            if not greedy.valid:
                report.skipped_invalid_greedy += 1
                continue
            if greedy.predicted_label != pair.label:
                failing.append(greedy)
        if chosen is None:
            report.skipped_no_correct_rationale += 1
            continue
        for greedy in failing:
            pairs_out.append(
                PreferencePair(
                    pair_id=pair.id,
                    query=pair.query,
                    title=pair.title,
                    chosen=LabeledRationale(chosen.rationale, chosen.predicted_label),
                    rejected=LabeledRationale(greedy.rationale, greedy.predicted_label),
                    chosen_perspective=chosen.perspective,
                    rejected_perspective=greedy.perspective,
                    chosen_logprob=chosen.logprob,
                    rejected_logprob=greedy.logprob,
                )
            )
            report.emitted += 1
    return pairs_out, report


def build_single_perspective_pairs(
    conflicts: Sequence[LabeledPair],
    gens: Sequence[GenerationRecord],
    perspective: Perspective,
) -> tuple[list[PreferencePair], PreferenceBuildReport]:
    """Control variant: chosen and rejected both come from one perspective.

    Useful for size-matched comparisons against the cross-perspective
    construction; a sample only yields a pair when the perspective's greedy
    output is wrong yet one of its own retries is correct.
    """
    filtered = [r for r in gens if r.perspective is perspective]
    indexed: dict[str, dict[int, GenerationRecord]] = {}
    for record in filtered:
        indexed.setdefault(record.pair_id, {})[record.attempt] = record
    pairs_out: list[PreferencePair] = []
    report = PreferenceBuildReport()
    for pair in conflicts:
        attempts = indexed.get(pair.id)
        if attempts is None or 0 not in attempts:
            raise ReferentialIntegrityError(
                f"pair {pair.id!r} has no attempt-0 record for "
                f"perspective {perspective.value}"
            )
        greedy = attempts[0]
        if not greedy.valid:
            report.skipped_invalid_greedy += 1
            continue
        if greedy.predicted_label == pair.label:
            continue  # this perspective did not fail here
        chosen = None
        for attempt in range(PASS_ATTEMPTS):
            record = attempts.get(attempt)
            if record is not None and record.valid and record.predicted_label == pair.label:
                chosen = record
                break
        if chosen is None:
            report.skipped_no_correct_rationale += 1
            continue
        pairs_out.append(
            PreferencePair(
                pair_id=pair.id,
                query=pair.query,
                title=pair.title,
                chosen=LabeledRationale(chosen.rationale, chosen.predicted_label),
                rejected=LabeledRationale(greedy.rationale, greedy.predicted_label),
                chosen_perspective=perspective,
                rejected_perspective=perspective,
                chosen_logprob=chosen.logprob,
                rejected_logprob=greedy.logprob,
            )
        )
        report.emitted += 1
    return pairs_out, report


def validate_preference_pairs(
    pairs: Sequence[PreferencePair], truth: Mapping[str, int]
) -> None:
    """Check the chosen-correct / rejected-incorrect invariant on every pair."""
    for pref in pairs:
        label = truth.get(pref.pair_id)
        if label is None:
            raise ReferentialIntegrityError(f"unknown pair {pref.pair_id!r}")
        if pref.chosen.label != label:
            raise ValidationError(f"pair {pref.pair_id!r}: chosen label is not ground truth")
        if pref.rejected.label == label:
            raise ValidationError(f"pair {pref.pair_id!r}: rejected label equals ground truth")


def _softplus(x: float) -> float:
    # log(1 + exp(x)) without overflow
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def dpo_loss(scores: Sequence[SequenceScore], beta: float = 1.0) -> float:
    """Mean pairwise preference loss: -log sigmoid(beta * margin).

    With the default ``beta`` of 1 and zero reference offsets the margin is
    the raw chosen-minus-rejected score difference; setting ``beta`` and the
    reference fields recovers the conventional reference-anchored variant.
    """
    if not scores:
        raise DegenerateInputError("empty score batch")
    if beta <= 0:
        raise InputError("beta must be positive")
    total = 0.0
    for score in scores:
        margin = beta * (
            (score.logprob_chosen - score.ref_logprob_chosen)
            - (score.logprob_rejected - score.ref_logprob_rejected)
        )
        total += _softplus(-margin)
    return total / len(scores)


def sequence_scores(pairs: Sequence[PreferencePair]) -> list[SequenceScore]:
    """Scores straight from the generation log-probabilities carried on pairs."""
    scores = []
    for pref in pairs:
        if pref.chosen_logprob is None or pref.rejected_logprob is None:
            raise InputError(
                f"pair {pref.pair_id!r} carries no sequence log-probabilities"
            )
        scores.append(
            SequenceScore(pref.pair_id, pref.chosen_logprob, pref.rejected_logprob)
        )
    return scores


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def write_sft_examples(
    path: str | Path, examples: Iterable[SftExample], schema: RelevanceSchema
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "pair_id": ex.pair_id,
                        "query": ex.query,
                        "title": ex.title,
                        "rationale": ex.rationale,
                        "label": schema.class_name(ex.label),
                        "source_perspective": ex.source_perspective.value,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_sft_examples(path: str | Path, schema: RelevanceSchema) -> list[SftExample]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", number) from None
            examples.append(
                SftExample(
                    pair_id=data["pair_id"],
                    query=data["query"],
                    title=data["title"],
                    rationale=data["rationale"],
                    label=schema.index_of(data["label"]),
                    source_perspective=Perspective.from_value(data["source_perspective"]),
                )
            )
    return examples


def write_preference_pairs(
    path: str | Path, pairs: Iterable[PreferencePair], schema: RelevanceSchema
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pref in pairs:
            fh.write(
                json.dumps(
                    {
                        "pair_id": pref.pair_id,
                        "query": pref.query,
                        "title": pref.title,
                        "chosen": {
                            "rationale": pref.chosen.rationale,
                            "label": schema.class_name(pref.chosen.label),
                        },
                        "rejected": {
                            "rationale": pref.rejected.rationale,
                            "label": schema.class_name(pref.rejected.label),
                        },
                        "chosen_perspective": pref.chosen_perspective.value,
                        "rejected_perspective": pref.rejected_perspective.value,
                        "chosen_logprob": pref.chosen_logprob,
                        "rejected_logprob": pref.rejected_logprob,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_preference_pairs(path: str | Path, schema: RelevanceSchema) -> list[PreferencePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", number) from None
            pairs.append(
                PreferencePair(
                    pair_id=data["pair_id"],
                    query=data["query"],
                    title=data["title"],
                    chosen=LabeledRationale(
                        data["chosen"]["rationale"], schema.index_of(data["chosen"]["label"])
                    ),
                    rejected=LabeledRationale(
                        data["rejected"]["rationale"],
                        schema.index_of(data["rejected"]["label"]),
                    ),
                    chosen_perspective=Perspective.from_value(data["chosen_perspective"]),
                    rejected_perspective=Perspective.from_value(data["rejected_perspective"]),
                    chosen_logprob=data.get("chosen_logprob"),
                    rejected_logprob=data.get("rejected_logprob"),
                )
            )
    return pairs


def write_skip_report(path: str | Path, report: PreferenceBuildReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
