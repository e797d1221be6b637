#!/usr/bin/env python3
"""Headline desk-scale experiment: tima vs tecoa across seeds.

Trains the default recipe end-to-end for each seed and prints clean accuracy,
robust accuracy per epsilon, and text-geometry stats for both variants.
"""

import argparse
import time

import numpy as np

from tima.attacks import AttackConfig, robust_accuracy
from tima.config import load_config, parse_config, parse_fraction
from tima.data import generate_synthetic
from tima.harness import eval_clean, finetune, interclass_stats, pretrain_clean
from tima.model import init_model, snapshot_teacher


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None, help="optional key = value config file")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--variants", default="tecoa,tima")
    ap.add_argument("--eps", default="1/255,4/255,8/255")
    args = ap.parse_args()

    base = load_config(args.config) if args.config else parse_config("")
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = args.variants.split(",")
    eps_list = [(e, parse_fraction(e)) for e in args.eps.split(",")]

    results = {v: {"clean": [], "robust": {e: [] for e, _ in eps_list}} for v in variants}
    for seed in seeds:
        cfg = base.with_seed(seed)
        train, test = generate_synthetic(cfg.synthetic_spec())
        t0 = time.time()
        model = init_model(cfg.encoder_config(), tau=cfg["tau"])
        model, _ = pretrain_clean(model, train, cfg.pretrain_config())
        teacher = snapshot_teacher(model)
        print(f"seed {seed}: teacher clean {eval_clean(model, test):.3f} "
              f"min text distance {interclass_stats(teacher.t_hat)[0]:.3f} "
              f"({time.time() - t0:.0f}s pretrain)")
        for variant in variants:
            student = model.clone()
            student, _ = finetune(student, teacher, train, cfg.finetune_config(variant=variant))
            clean = eval_clean(student, test)
            results[variant]["clean"].append(clean)
            row = f"  {variant:9s} clean {clean:.3f}"
            for eps_text, eps in eps_list:
                atk = AttackConfig(eps=eps, step_size=1 / 255, steps=10, restarts=0)
                acc = robust_accuracy(student, teacher, test, atk)
                results[variant]["robust"][eps_text].append(acc)
                row += f"  rob@{eps_text} {acc:.3f}"
            print(row)

    print("\n=== means over seeds", seeds)
    for variant in variants:
        row = f"{variant:9s} clean {np.mean(results[variant]['clean']):.3f}"
        for eps_text, _ in eps_list:
            row += f"  rob@{eps_text} {np.mean(results[variant]['robust'][eps_text]):.3f}"
        print(row)
    if "tima" in variants and "tecoa" in variants:
        for eps_text, _ in eps_list:
            gap = np.mean(results["tima"]["robust"][eps_text]) - \
                np.mean(results["tecoa"]["robust"][eps_text])
            print(f"tima - tecoa robust gap @ {eps_text}: {100 * gap:+.1f}pp")


if __name__ == "__main__":
    main()
