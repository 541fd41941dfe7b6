#!/usr/bin/env python3
"""Render training/comparison/sweep CSVs emitted by the slate CLI.

Usage:
  plot_curves.py metrics runs/a/metrics.csv [runs/b/metrics.csv ...] -o out.png
  plot_curves.py sweep runs/sweep/sweep.csv -o sweep.png
"""
import argparse
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def plot_metrics(paths, out):
    fig, (ax_em, ax_r) = plt.subplots(1, 2, figsize=(11, 4))
    for path in paths:
        rows = read_csv(path)
        tokens = [int(r["tokens"]) for r in rows]
        label = pathlib.Path(path).parent.name or path
        ax_em.plot(tokens, [float(r["em_rate"]) for r in rows], label=label)
        ax_r.plot(tokens, [float(r["mean_total_reward"]) for r in rows], label=label)
    ax_em.set_xlabel("cumulative sampled tokens")
    ax_em.set_ylabel("rolling exact match")
    ax_em.set_ylim(0, 1.05)
    ax_r.set_xlabel("cumulative sampled tokens")
    ax_r.set_ylabel("mean total reward")
    for ax in (ax_em, ax_r):
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def plot_sweep(path, out):
    rows = read_csv(path)
    by_k = {}
    for r in rows:
        by_k.setdefault(int(r["k"]), []).append(float(r["final_em"]))
    ks = sorted(by_k)
    means = [sum(by_k[k]) / len(by_k[k]) for k in ks]
    fig, ax = plt.subplots(figsize=(5, 4))
    for k in ks:
        ax.scatter([k] * len(by_k[k]), by_k[k], alpha=0.35, color="tab:blue")
    ax.plot(ks, means, "o-", color="tab:red", label="aggregate")
    ax.set_xlabel("candidates per step (k)")
    ax.set_ylabel("final exact match")
    ax.set_xticks(ks)
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("kind", choices=["metrics", "sweep"])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--out", default="curves.png")
    args = ap.parse_args()
    if args.kind == "metrics":
        plot_metrics(args.csv, args.out)
    else:
        plot_sweep(args.csv[0], args.out)


if __name__ == "__main__":
    main()
