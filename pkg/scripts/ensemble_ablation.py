"""Compare single models, additive and linear-probe ensembles, and capability-guided fusion.

    python3 scripts/ensemble_ablation.py --seeds 0 1 2 --sigma-rel 0.02
"""
import argparse
import json

import numpy as np

from ovfuse.experiments import ensemble_experiment
from ovfuse.synth import SyntheticSceneSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--sigma-rel", type=float, default=0.02)
    ap.add_argument("--spec", help="synthetic scene spec JSON (defaults to the built-in room)")
    ap.add_argument("--json", help="write per-seed results here")
    args = ap.parse_args()

    spec = SyntheticSceneSpec.from_json(json.load(open(args.spec))) if args.spec else SyntheticSceneSpec()
    rows = []
    for seed in args.seeds:
        r = ensemble_experiment(spec, seed, args.sigma_rel)
        rows.append({"seed": seed, **r.miou, "ceiling": r.ceiling_miou, "ceiling_ratio": r.ceiling_ratio})
        print(f"seed {seed}: " + "  ".join(f"{k} {v:.3f}" for k, v in r.miou.items())
              + f"  ceiling {r.ceiling_miou:.3f}")
    if len(rows) > 1:
        keys = [k for k in rows[0] if k != "seed"]
        print("mean:   " + "  ".join(f"{k} {np.mean([r[k] for r in rows]):.3f}" for k in keys))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
