"""Build the distillation dataset: one rationale embedding per labeled pair.

Two selection modes exist. ``first`` takes the first correct rationale,
scanning perspectives in canonical order and attempts in ascending index,
matching how preference construction picks its chosen member. ``combined``
joins one rationale per perspective (its first correct one, falling back to
its greedy attempt) into a single separator-joined text before embedding.
Pairs without any usable rationale are dropped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .cot_embedding import COMBINE_SEPARATOR, EmbeddingProvider, embed_combined
from .errors import InputError
from .schemas import PERSPECTIVES, LabeledPair
from .teacher import GenerationRecord
from .training import DistillExample


@dataclass
class DistillBuildReport:
    kept: int = 0
    dropped_no_rationale: int = 0

    def to_dict(self) -> dict:
        return {"kept": self.kept, "dropped_no_rationale": self.dropped_no_rationale}


def build_distill_dataset(
    pairs: Sequence[LabeledPair],
    gens: Sequence[GenerationRecord],
    embedder: EmbeddingProvider,
    mode: str = "first",
) -> tuple[list[DistillExample], DistillBuildReport]:
    if mode not in ("first", "combined"):
        raise InputError("mode must be 'first' or 'combined'")
    indexed: dict[str, dict] = {}
    for record in gens:
        indexed.setdefault(record.pair_id, {}).setdefault(record.perspective, {})[
            record.attempt
        ] = record

    examples: list[DistillExample] = []
    report = DistillBuildReport()
    for pair in pairs:
        per_perspective = indexed.get(pair.id, {})
        if mode == "first":
            rationale = _first_correct(per_perspective, pair.label)
            embedded = embedder.embed(rationale) if rationale is not None else None
        else:
            parts = []
            for perspective in PERSPECTIVES:
                attempts = per_perspective.get(perspective, {})
                best = _first_correct({perspective: attempts}, pair.label)
                if best is None and 0 in attempts and attempts[0].valid:
                    best = attempts[0].rationale
                if best is not None:
                    parts.append(best)
            if len(parts) == len(PERSPECTIVES):
                rationale = COMBINE_SEPARATOR.join(parts)
                embedded = embed_combined(parts, embedder)
            else:
                rationale, embedded = None, None
        if rationale is None or embedded is None:
            report.dropped_no_rationale += 1
            continue
        examples.append(
            DistillExample(pair=pair, rationale=rationale, embedding=embedded.vector)
        )
        report.kept += 1
    return examples, report


def _first_correct(per_perspective: dict, label: int) -> str | None:
    for perspective in PERSPECTIVES:
        attempts = per_perspective.get(perspective, {})
        for attempt in sorted(attempts):
            record = attempts[attempt]
            if record.valid and record.predicted_label == label:
                return record.rationale
    return None
