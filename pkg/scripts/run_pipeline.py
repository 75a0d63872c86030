#!/usr/bin/env python3
"""End-to-end desk-scale experiment.

Generates a synthetic corpus, simulates multi-perspective teacher outputs,
builds the filtered SFT set and the cross-perspective preference pairs,
trains the three student variants, and prints a compact comparison table.
Artifacts land under --workdir so every stage can be inspected or re-driven
through the CLI.
"""

import argparse
import json
import time
from pathlib import Path

from reldistill.config import ExtractorConfig, OptimizerConfig, RunConfig
from reldistill.cot_embedding import MockEmbedder
from reldistill.distill_data import build_distill_dataset
from reldistill.evaluation import metrics
from reldistill.pipeline import (
    aggregate_sft,
    build_preference_pairs,
    consistency_filter,
    dpo_loss,
    greedy_predictions,
    mine_conflicts,
    sequence_scores,
    write_preference_pairs,
    write_sft_examples,
    write_skip_report,
)
from reldistill.schemas import PERSPECTIVES, get_schema, write_dataset
from reldistill.teacher import (
    PerspectiveErrorMatrix,
    gen_synthetic_corpus,
    simulate_corpus,
    write_generations,
)
from reldistill.training import Variant, predict_labels, train_student


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/pipeline")
    parser.add_argument("--schema", default="aliexpress6")
    parser.add_argument("--train-size", type=int, default=5000)
    parser.add_argument("--test-size", type=int, default=1000)
    parser.add_argument("--attempts", type=int, default=3)
    parser.add_argument("--epochs", type=int, default=24)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--lr", type=float, default=1.5e-3)
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--extractor", default="gat", choices=["mlp", "poly", "gat"])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    schema = get_schema(args.schema)

    print("== data ==")
    train_pairs = gen_synthetic_corpus(args.train_size, schema, seed=args.seed)
    test_pairs = gen_synthetic_corpus(args.test_size, schema, seed=args.seed + 1)
    write_dataset(workdir / "train.jsonl", train_pairs, schema)
    write_dataset(workdir / "test.jsonl", test_pairs, schema)
    matrix = PerspectiveErrorMatrix.default_for(schema)
    gens = simulate_corpus(train_pairs, schema, matrix, args.attempts, seed=args.seed + 2)
    write_generations(workdir / "generations.jsonl", gens, schema)
    print(f"{len(train_pairs)} train / {len(test_pairs)} test pairs, {len(gens)} generations")

    print("== teacher data pipeline ==")
    per_perspective = [consistency_filter(train_pairs, gens, p) for p in PERSPECTIVES]
    sft = aggregate_sft(per_perspective)
    write_sft_examples(workdir / "sft.jsonl", sft, schema)
    conflicts = mine_conflicts(train_pairs, greedy_predictions(gens))
    write_dataset(workdir / "conflicts.jsonl", conflicts, schema)
    prefs, report = build_preference_pairs(conflicts, gens)
    write_preference_pairs(workdir / "preferences.jsonl", prefs, schema)
    write_skip_report(workdir / "skip_report.json", report)
    sizes = ", ".join(str(len(x)) for x in per_perspective)
    print(f"kept per perspective: {sizes}; aggregated {len(sft)}")
    print(f"conflicts {len(conflicts)}; preference pairs {report.emitted} "
          f"(skipped {report.skipped_no_correct_rationale})")
    print(f"preference loss under simulator scores: {dpo_loss(sequence_scores(prefs)):.4f}")

    print("== student training ==")
    embedder = MockEmbedder(dim=args.embed_dim, seed=args.seed)
    examples, drop_report = build_distill_dataset(train_pairs, gens, embedder)
    print(f"distill examples: {drop_report.kept} (dropped {drop_report.dropped_no_rationale})")
    results = {}
    for variant in Variant:
        config = RunConfig(
            seed=args.seed,
            schema=schema,
            extractor=ExtractorConfig(kind=args.extractor, output_dim=args.embed_dim),
            optimizer=OptimizerConfig(lr=args.lr, batch_size=args.batch_size,
                                      epochs=args.epochs, warmup_steps=200),
        )
        start = time.time()
        out_dir = workdir / f"ckpt_{variant.value}"
        trained = train_student(examples, config, variant, out_dir=out_dir)
        preds = predict_labels(trained.model, test_pairs)
        report = metrics(preds.tolist(), [p.label for p in test_pairs], schema)
        results[variant.value] = {"accuracy": report.accuracy, "macro_f1": report.macro_f1}
        print(f"{variant.value:12s} acc={report.accuracy:.4f} macroF1={report.macro_f1:.4f} "
              f"({time.time() - start:.0f}s) -> {out_dir}")

    (workdir / "summary.json").write_text(json.dumps(results, indent=2) + "\n")
    print(f"summary -> {workdir / 'summary.json'}")


if __name__ == "__main__":
    main()
