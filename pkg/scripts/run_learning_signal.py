"""Train the toy referring tracker over several seeds and report the learning signal.

    python3 scripts/run_learning_signal.py --seeds 5 --steps 300
"""

import argparse
import json
import time

import numpy as np

from artrack.train import TrainConfig, train_toy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--lr", type=float, default=TrainConfig.lr)
    ap.add_argument("--json", help="also write the per-seed table here")
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        r = train_toy(TrainConfig(seed=seed, steps=args.steps, noise=args.noise, lr=args.lr))
        rows.append({"seed": seed, **r.summary(), "seconds": round(time.perf_counter() - t0, 2)})
        s = rows[-1]
        print(f"seed {seed}: loss {s['initial_loss']:.3f} -> {s['final_loss']:.3f}  "
              f"acc {s['referring_accuracy']:.3f}  chi+ {s['mean_positive_similarity']:.3f}  "
              f"chi- {s['mean_negative_similarity']:.3f}  '{' '.join(s['expression'].values())}'")

    acc = np.mean([r["referring_accuracy"] for r in rows])
    pos = np.mean([r["mean_positive_similarity"] for r in rows])
    neg = np.mean([r["mean_negative_similarity"] for r in rows])
    print(f"mean accuracy {acc:.3f}, mean chi positive {pos:.3f} vs negative {neg:.3f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
