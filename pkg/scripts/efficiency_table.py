#!/usr/bin/env python3
"""Parameter and latency audit table.

Prints the closed-form extractor parameter deltas at a production-style
width (768 by default, width-preserving maps, no output projection) and,
optionally, timed forward passes of a desk-scale checkpoint on a 100-pair
batch.
"""

import argparse

from reldistill.config import ExtractorConfig
from reldistill.evaluation import efficiency_audit
from reldistill.extractors import build_extractor, extractor_parameter_count
from reldistill.schemas import get_schema
from reldistill.teacher import gen_synthetic_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--width", type=int, default=768)
    parser.add_argument("--ckpt", help="checkpoint directory for the latency audit")
    parser.add_argument("--batch", type=int, default=100)
    args = parser.parse_args()

    print(f"extractor parameter deltas at width {args.width} (projection off):")
    configs = {
        "poly (32 codes)": ExtractorConfig(kind="poly", codes=32, output_dim=args.width,
                                           project_output=False),
        "gat (1 layer)": ExtractorConfig(kind="gat", hidden_dim=args.width,
                                         output_dim=args.width, project_output=False),
        "mlp (2 layers)": ExtractorConfig(kind="mlp", hidden_dim=args.width,
                                          mlp_layers=2, output_dim=args.width,
                                          project_output=False),
    }
    for name, cfg in configs.items():
        closed = extractor_parameter_count(cfg, args.width)
        built = sum(p.numel() for p in build_extractor(cfg, args.width).parameters())
        print(f"  {name:16s} {closed:>10,} params (instantiated: {built:,})")

    if args.ckpt:
        schema = get_schema("aliexpress6")
        pairs = gen_synthetic_corpus(args.batch, schema, seed=0)
        report = efficiency_audit(args.ckpt, pairs)
        print(f"checkpoint audit: {report.param_count:,} params "
              f"(+{report.param_delta_vs_baseline:,} extractor), "
              f"{report.mean_latency_ms:.2f} ms per {args.batch}-pair batch")


if __name__ == "__main__":
    main()
