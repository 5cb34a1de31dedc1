#!/usr/bin/env python3
"""Corpus synthesis -> two training runs -> full experiment suite.

Runs the same pipeline the acceptance tests gate on: generate the base
corpus, frequency-augment it, train one checkpoint per forward-prediction
horizon, then score both with the evaluation experiments. Everything is
seeded; two invocations produce byte-identical artifacts.

The full configuration takes roughly twenty minutes on a laptop CPU;
--quick shrinks corpus and optimizer enough for a couple-minute smoke run
(its experiment verdicts are not meaningful, the models are undertrained).
"""

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from phasemotion.cli import main as cli  # noqa: E402

FULL = {
    "gen": ["--base", "34", "--joints", "14", "--duration", "6.0"],
    "model_cfg": "c = 8\nwindow = 100\nhidden = 8\nkernel = 9\n",
    "train_cfg": ("lr = 1e-4\nweight_decay = 5e-4\nbatch = 50\n"
                  "max_iters = 5000\neval_every = 500\nseed = 1\n"),
    "horizons": (0, 100),
}

QUICK = {
    "gen": ["--base", "6", "--joints", "5", "--duration", "6.0"],
    "model_cfg": "c = 3\nwindow = 60\nhidden = 4\nkernel = 7\n",
    "train_cfg": ("lr = 1e-4\nweight_decay = 5e-4\nbatch = 10\n"
                  "max_iters = 300\neval_every = 100\nseed = 1\n"),
    "horizons": (0, 12),
}


def step(argv):
    print(f"+ phasemotion {' '.join(argv)}", flush=True)
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/experiment",
                    help="root directory for all artifacts")
    ap.add_argument("--seed", type=int, default=7, help="corpus seed")
    ap.add_argument("--quick", action="store_true",
                    help="small corpus and short optimization, smoke only")
    ap.add_argument("--skip-train", action="store_true",
                    help="reuse checkpoints already present under --out")
    args = ap.parse_args()
    recipe = QUICK if args.quick else FULL

    root = args.out
    base_dir = os.path.join(root, "corpus_base")
    aug_dir = os.path.join(root, "corpus")
    for d in (base_dir, aug_dir):
        os.makedirs(d, exist_ok=True)
    cfg_path = os.path.join(root, "train.cfg")
    with open(cfg_path, "w") as f:
        f.write(recipe["model_cfg"])
        f.write(recipe["train_cfg"])

    step(["gen", "--out", base_dir, "--seed", str(args.seed)] + recipe["gen"])
    step(["augment", "--out", aug_dir,
          "--manifest", os.path.join(base_dir, "manifest.json")])

    manifest = os.path.join(aug_dir, "manifest.json")
    ckpts = {}
    for horizon in recipe["horizons"]:
        run_dir = os.path.join(root, f"train_n{horizon}")
        ckpts[horizon] = os.path.join(run_dir, "model.ckpt")
        if args.skip_train and os.path.exists(ckpts[horizon]):
            print(f"= reusing {ckpts[horizon]}", flush=True)
            continue
        os.makedirs(run_dir, exist_ok=True)
        step(["train", "--out", run_dir, "--manifest", manifest,
              "--config", cfg_path, "--horizon", str(horizon)])

    h0, hN = recipe["horizons"]
    eval_dir = os.path.join(root, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    step(["eval", "--ckpt0", ckpts[h0], "--ckpt100", ckpts[hN],
          "--manifest", manifest, "--out", eval_dir])

    with open(os.path.join(eval_dir, "summary.json")) as f:
        summary = json.load(f)
    print("\nexperiment verdicts:")
    for name, res in summary["experiments"].items():
        print(f"  {name}: {'pass' if res['passed'] else 'FAIL'}")
    print("all passed" if summary["all_passed"] else "SOME EXPERIMENTS FAILED")
    return 0 if summary["all_passed"] else 3


if __name__ == "__main__":
    sys.exit(main())
