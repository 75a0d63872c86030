"""Command-line surface for the pipeline.

Each subcommand reads and writes the JSONL formats defined by the library,
so stages are resumable and inspectable. Exit codes: 0 success, 2 validation
error, 3 external-service error. Service endpoints come from flags or the
RELDISTILL_GEN_ENDPOINT / RELDISTILL_EMBED_ENDPOINT environment variables.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import distill_data, evaluation, pipeline, teacher, tiering, training
from .config import ExtractorConfig, RunConfig, load_run_config
from .cot_embedding import EmbeddingCache, ExternalEmbedder, MockEmbedder
from .errors import ExternalServiceError, ValidationError
from .extractors import build_extractor, extractor_parameter_count
from .schemas import get_schema, load_dataset, write_dataset
from .teacher import GenerationBackend, PerspectiveErrorMatrix


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML/JSON run config file")
    parser.add_argument("--schema", help="builtin schema name or schema JSON path")
    parser.add_argument("--seed", type=int, help="override the config seed")


def _resolve_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    updates = {}
    if getattr(args, "schema", None):
        updates["schema"] = get_schema(args.schema)
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if updates:
        config = dataclasses.replace(config, **updates)
    return config


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_gen_synth(args) -> int:
    config = _resolve_config(args)
    pairs = teacher.gen_synthetic_corpus(args.n, config.schema, config.seed)
    write_dataset(args.out, pairs, config.schema)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def _simulate(args, config, pairs):
    matrix = PerspectiveErrorMatrix.default_for(config.schema)
    return teacher.simulate_corpus(
        pairs, config.schema, matrix, args.attempts, config.seed
    )


def cmd_teach_generate(args) -> int:
    config = _resolve_config(args)
    pairs = load_dataset(args.data, config.schema)
    if args.backend == "simulator":
        records = _simulate(args, config, pairs)
    else:
        endpoint = args.endpoint or os.environ.get("RELDISTILL_GEN_ENDPOINT")
        backend = GenerationBackend(kind="external", attempts=args.attempts, endpoint=endpoint)
        records = teacher.external_generate_many(pairs, backend, config.schema)
    teacher.write_generations(args.out, records, config.schema)
    print(f"wrote {len(records)} generations to {args.out}")
    return 0


def cmd_build_sft(args) -> int:
    config = _resolve_config(args)
    pairs = load_dataset(args.data, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    per_perspective = [
        pipeline.consistency_filter(pairs, gens, perspective)
        for perspective in teacher.PERSPECTIVES
    ]
    merged = pipeline.aggregate_sft(per_perspective)
    pipeline.write_sft_examples(args.out, merged, config.schema)
    sizes = ", ".join(str(len(x)) for x in per_perspective)
    print(f"wrote {len(merged)} examples to {args.out} (per perspective: {sizes})")
    return 0


def cmd_mine_conflicts(args) -> int:
    config = _resolve_config(args)
    pairs = load_dataset(args.data, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    predictions = pipeline.greedy_predictions(gens)
    conflicts = pipeline.mine_conflicts(pairs, predictions)
    write_dataset(args.out, conflicts, config.schema)
    print(f"wrote {len(conflicts)} conflict pairs to {args.out}")
    return 0


def cmd_build_dpo(args) -> int:
    config = _resolve_config(args)
    conflicts = load_dataset(args.conflicts, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    prefs, report = pipeline.build_preference_pairs(conflicts, gens)
    pipeline.write_preference_pairs(args.out, prefs, config.schema)
    if args.report:
        pipeline.write_skip_report(args.report, report)
    print(
        f"wrote {report.emitted} preference pairs to {args.out} "
        f"(skipped without correct rationale: {report.skipped_no_correct_rationale})"
    )
    return 0


def _make_embedder(args, config: RunConfig):
    if getattr(args, "embedder", "mock") == "mock":
        return MockEmbedder(config.extractor.output_dim, seed=config.seed)
    endpoint = getattr(args, "embed_endpoint", None) or os.environ.get(
        "RELDISTILL_EMBED_ENDPOINT"
    )
    cache_dir = getattr(args, "embed_cache", None)
    cache = EmbeddingCache(cache_dir) if cache_dir else None
    return ExternalEmbedder(
        endpoint,
        dim=config.extractor.output_dim,
        max_tokens=config.max_cot_tokens,
        cache=cache,
    )


def cmd_train_student(args) -> int:
    config = _resolve_config(args)
    if args.guidance_weight is not None:
        config = dataclasses.replace(config, guidance_weight=args.guidance_weight)
    if args.epochs is not None:
        config.optimizer.epochs = args.epochs
    pairs = load_dataset(args.data, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    embedder = _make_embedder(args, config)
    examples, report = distill_data.build_distill_dataset(
        pairs, gens, embedder, mode=args.rationale_mode
    )
    result = training.train_student(
        examples, config, training.Variant(args.variant), out_dir=args.out
    )
    last = result.history[-1] if result.history else None
    summary = (
        f"val macro-F1 {last.macro_f1:.4f} at epoch {result.best_epoch}"
        if last
        else "no training epochs"
    )
    print(
        f"trained on {report.kept} examples (dropped {report.dropped_no_rationale}); "
        f"{summary}; checkpoint at {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    loaded = training.load_checkpoint(args.ckpt)
    pairs = load_dataset(args.data, loaded.config.schema)
    preds = training.predict_labels(loaded.model, pairs)
    report = evaluation.metrics(preds.tolist(), [p.label for p in pairs], loaded.config.schema)
    _write_json(args.out, report.to_dict())
    print(f"accuracy {report.accuracy:.4f}, macro-F1 {report.macro_f1:.4f} -> {args.out}")
    return 0


def cmd_oracle_report(args) -> int:
    config = _resolve_config(args)
    pairs = load_dataset(args.data, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    attempts = evaluation.attempts_from_records(gens, pairs)
    report = evaluation.oracle_report(attempts, [p.label for p in pairs], args.k)
    _write_json(args.out, report.to_dict())
    print(
        f"oracle {report.oracle_acc:.4f} > best pass@{args.k} "
        f"{report.best_single_passk:.4f} ({report.best_perspective}) -> {args.out}"
    )
    return 0


def cmd_heatmap(args) -> int:
    config = _resolve_config(args)
    pairs = load_dataset(args.data, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    result = evaluation.perspective_heatmap(pairs, gens, config.schema)
    evaluation.save_heatmap_csv(args.out_csv, result, config.schema)
    if args.out_png:
        evaluation.save_heatmap_png(args.out_png, result, config.schema)
    print(f"wrote heatmap to {args.out_csv}")
    return 0


def cmd_probe(args) -> int:
    loaded = training.load_checkpoint(args.ckpt)
    config = loaded.config
    pairs = load_dataset(args.data, config.schema)
    gens = teacher.load_generations(args.gens, config.schema)
    embedder = MockEmbedder(config.extractor.output_dim, seed=config.seed)
    examples, _ = distill_data.build_distill_dataset(pairs, gens, embedder, mode="first")
    kept_pairs = [ex.pair for ex in examples]
    cots = [ex.rationale for ex in examples]
    latent, pooled = training.representations(loaded.model, kept_pairs)
    if latent is None:
        raise ValidationError("checkpoint has no extractor; nothing to probe")
    study = evaluation.probe_study(
        kept_pairs, cots, latent, pooled, top_n=args.top_n, runs=args.runs,
        seed=config.seed,
    )
    _write_json(args.out, study.to_dict())
    if args.out_csv:
        evaluation.save_probe_csv(args.out_csv, study)
    if args.out_png:
        evaluation.save_probe_png(args.out_png, study)
    print(
        f"latent mean F1 {study.mean_f1_latent:.3f} vs pooled {study.mean_f1_cls:.3f} "
        f"({study.wins_latent}/{len(study.keywords)} keywords, p={study.p_value:.2g}) "
        f"-> {args.out}"
    )
    return 0


def cmd_bench(args) -> int:
    payload: dict = {}
    if args.ckpt:
        if not args.data:
            raise ValidationError("bench with --ckpt needs --data for the timing batch")
        loaded_config = training.load_checkpoint(args.ckpt).config
        pairs = load_dataset(args.data, loaded_config.schema)[: args.batch]
        report = evaluation.efficiency_audit(args.ckpt, pairs)
        payload["checkpoint"] = report.to_dict()
        print(
            f"params {report.param_count} (+{report.param_delta_vs_baseline} extractor), "
            f"{report.mean_latency_ms:.2f} ms per batch of {len(pairs)}"
        )
    if args.audit_extractors:
        deltas = {}
        for kind in ("mlp", "poly", "gat"):
            cfg = ExtractorConfig(
                kind=kind, hidden_dim=args.width, output_dim=args.width,
                project_output=False,
            )
            count = extractor_parameter_count(cfg, args.width)
            built = sum(p.numel() for p in build_extractor(cfg, args.width).parameters())
            deltas[kind] = {"closed_form": count, "instantiated": built}
            print(f"extractor delta at width {args.width}: {kind} = {count}")
        payload["extractor_deltas"] = deltas
    if args.out:
        _write_json(args.out, payload)
    return 0


def cmd_calibrate(args) -> int:
    loaded = training.load_checkpoint(args.ckpt)
    schema = loaded.config.schema
    pairs = load_dataset(args.data, schema)
    probs = training.predict_proba(loaded.model, pairs)
    scores = [tiering.relevance_score(row, schema) for row in probs]
    true_tiers = [schema.tier_of(p.label) for p in pairs]
    targets = (
        [float(x) for x in args.per_tier.split(",")] if args.per_tier
        else args.target_precision
    )
    calibration, report = tiering.calibrate_thresholds(
        scores, true_tiers, targets, filter_below_tier=args.filter_below_tier
    )
    tiering.write_calibration(args.out, calibration)
    if args.report:
        _write_json(args.report, report.to_dict())
    flagged = f" (unattainable tiers: {report.unattainable_tiers})" if report.unattainable_tiers else ""
    print(f"thresholds {list(calibration.thresholds)} -> {args.out}{flagged}")
    return 0


def cmd_score(args) -> int:
    loaded = training.load_checkpoint(args.ckpt)
    schema = loaded.config.schema
    calibration = tiering.load_calibration(args.calibration)
    pairs = load_dataset(args.data, schema)
    probs = training.predict_proba(loaded.model, pairs)
    result = tiering.filter_batch(pairs, probs, calibration, schema)
    tiering.write_filter_audit(args.out, result)
    if args.kept_out:
        write_dataset(args.kept_out, result.kept, schema)
    print(f"kept {len(result.kept)}/{len(pairs)} pairs; audit -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reldistill",
        description="Relevance distillation pipeline: teacher data, student training, "
        "evaluation, and deployment-style tier filtering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic labeled corpus")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("teach-generate", help="produce teacher generations")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--attempts", type=int, default=3)
    p.add_argument("--backend", choices=["simulator", "external"], default="simulator")
    p.add_argument("--endpoint")
    p.set_defaults(func=cmd_teach_generate)

    p = sub.add_parser("build-sft", help="consistency-filter and aggregate rationales")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_sft)

    p = sub.add_parser("mine-conflicts", help="pairs misclassified by any perspective")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine_conflicts)

    p = sub.add_parser("build-dpo", help="construct cross-perspective preference pairs")
    _add_common(p)
    p.add_argument("--conflicts", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="skip-report JSON path")
    p.set_defaults(func=cmd_build_dpo)

    p = sub.add_parser("train-student", help="train the distilled student")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument(
        "--variant", choices=[v.value for v in training.Variant], default="full"
    )
    p.add_argument("--rationale-mode", choices=["first", "combined"], default="first")
    p.add_argument("--guidance-weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--embedder", choices=["mock", "external"], default="mock")
    p.add_argument("--embed-endpoint", help="embedding service URL "
                   "(or RELDISTILL_EMBED_ENDPOINT)")
    p.add_argument("--embed-cache", help="directory for the embedding cache")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("eval", help="accuracy and macro-F1 of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-report", help="multi-perspective oracle vs pass@k")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle_report)

    p = sub.add_parser("heatmap", help="per-(perspective, class) accuracy grid")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-png")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("probe", help="keyword probing of frozen representations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gens", required=True)
    p.add_argument("--top-n", type=int, default=15)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--out-csv")
    p.add_argument("--out-png")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("bench", help="parameter and latency audit")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--audit-extractors", action="store_true",
                   help="closed-form extractor deltas at --width")
    p.add_argument("--width", type=int, default=768)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", help="fit tier thresholds on labeled data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target-precision", type=float, default=0.8)
    p.add_argument("--per-tier", help="comma-separated precision targets for tiers 1..4")
    p.add_argument("--filter-below-tier", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score, tier, and filter a batch")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", required=True, help="audit JSONL path")
    p.add_argument("--kept-out", help="write kept pairs as a dataset")
    p.set_defaults(func=cmd_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExternalServiceError as exc:
        print(f"external service error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
