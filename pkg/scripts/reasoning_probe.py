#!/usr/bin/env python3
"""Keyword probing study on a trained student.

Trains (or loads) a guidance-distilled student, freezes it, and checks which
rationale keywords a linear probe can read off the latent reasoning vector
versus the pooled classification vector.
"""

import argparse
import json
from pathlib import Path

from reldistill.config import ExtractorConfig, OptimizerConfig, RunConfig
from reldistill.cot_embedding import MockEmbedder
from reldistill.distill_data import build_distill_dataset
from reldistill.evaluation import probe_study, save_probe_png
from reldistill.schemas import get_schema
from reldistill.teacher import PerspectiveErrorMatrix, gen_synthetic_corpus, simulate_corpus
from reldistill.training import Variant, load_checkpoint, representations, train_student


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/probe")
    parser.add_argument("--ckpt", help="existing checkpoint; trains one when omitted")
    parser.add_argument("--schema", default="aliexpress6")
    parser.add_argument("--pairs", type=int, default=5000)
    parser.add_argument("--epochs", type=int, default=24)
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--top-n", type=int, default=15)
    parser.add_argument("--runs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    schema = get_schema(args.schema)

    pairs = gen_synthetic_corpus(args.pairs, schema, seed=11)
    matrix = PerspectiveErrorMatrix.default_for(schema)
    gens = simulate_corpus(pairs, schema, matrix, attempts=3, seed=13)
    embedder = MockEmbedder(dim=args.embed_dim, seed=0)
    examples, _ = build_distill_dataset(pairs, gens, embedder)
    kept_pairs = [ex.pair for ex in examples]
    cots = [ex.rationale for ex in examples]

    if args.ckpt:
        model = load_checkpoint(args.ckpt).model
    else:
        config = RunConfig(
            seed=args.seed,
            schema=schema,
            extractor=ExtractorConfig(kind="gat", output_dim=args.embed_dim),
            optimizer=OptimizerConfig(lr=1.5e-3, batch_size=32, epochs=args.epochs,
                                      warmup_steps=200),
        )
        print("training a guidance-distilled student...")
        model = train_student(examples, config, Variant.FULL,
                              out_dir=workdir / "ckpt").model

    latent, pooled = representations(model, kept_pairs)
    study = probe_study(kept_pairs, cots, latent, pooled,
                        top_n=args.top_n, runs=args.runs, seed=args.seed)
    print(f"latent mean F1 {study.mean_f1_latent:.3f} vs pooled {study.mean_f1_cls:.3f} "
          f"({study.wins_latent}/{len(study.keywords)} keyword wins, p={study.p_value:.3g})")
    for result in study.results:
        print(f"  {result.keyword:18s} latent={result.f1_latent:.3f} "
              f"pooled={result.f1_cls:.3f} p={result.p_value:.3g}")

    (workdir / "probe.json").write_text(json.dumps(study.to_dict(), indent=2) + "\n")
    save_probe_png(workdir / "probe.png", study)
    print(f"artifacts -> {workdir}")


if __name__ == "__main__":
    main()
