#!/usr/bin/env python3
"""Generate a synthetic dataset and run the full ablation grid through the
file-based pipeline (seven variants, each retrained end to end)."""

import argparse
import json

from audiorec.pipeline import PipelineConfig, run_stage


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/ablations_run")
    parser.add_argument("--config", help="optional JSON config file")
    args = parser.parse_args()

    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    config.seed = args.seed
    run_stage("synth", config, args.out)
    report = run_stage("ablate", config, args.out)
    print(f"{'variant':<22} {'segment':<6} {'HR@10':>7} {'MRR':>7} {'coverage':>9}")
    for name, entry in report["variants"].items():
        for seg in ("warm", "cold"):
            rep = entry.get(seg)
            if rep:
                print(
                    f"{name:<22} {seg:<6} {rep['hr_at_k']:>7.3f} "
                    f"{rep['mrr']:>7.3f} {rep['coverage']:>9.3f}"
                )
    print(json.dumps({"out": args.out}, indent=None))


if __name__ == "__main__":
    main()
