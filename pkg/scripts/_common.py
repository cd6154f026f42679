"""Helpers shared by the ablation scripts."""

import argparse
import contextlib
import csv
import sys
import time

import numpy as np

from learngene_pool import pipeline
from learngene_pool.config import build_config
from learngene_pool.data_io import gen_synthetic
from learngene_pool.descendant import assemble, evaluate
from learngene_pool.genepool import enumerate_paths


def base_parser(doc: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=doc.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples-per-class", type=int, default=20)
    ap.add_argument("--heldout-per-class", type=int, default=10)
    ap.add_argument("--finetune-steps", type=int, default=300)
    ap.add_argument("--noise", type=float, default=0.08, help="pixel noise of the synthetic data")
    ap.add_argument("--out", help="CSV destination (default: stdout)")
    return ap


def config_from(args, **overrides):
    values = {"seed": args.seed, "samples_per_class": args.samples_per_class,
              "finetune_steps": args.finetune_steps}
    values.update(overrides)
    return build_config(values)


def datasets(cfg, heldout_per_class: int, noise: float = 0.08):
    size = cfg.profile_obj().image_size
    train = gen_synthetic(cfg.num_classes, cfg.samples_per_class, size, seed=cfg.data_seed, noise=noise)
    heldout = gen_synthetic(cfg.num_classes, heldout_per_class, size, seed=cfg.data_seed + 100, noise=noise)
    return train, heldout


def path_accuracies(pool, data) -> dict[str, float]:
    return {p.id: evaluate(assemble(pool, p), data) for p in enumerate_paths(pool, "table")}


def loss_window(trace, key="L_cls", width=50):
    vals = [r[key] for r in trace]
    width = min(width, len(vals))
    return float(np.mean(vals[:width])), float(np.mean(vals[-width:]))


def progress(msg: str, start: float):
    print(f"[{time.perf_counter() - start:6.1f}s] {msg}", file=sys.stderr)


def write_rows(rows: list[dict], out: str | None):
    with open(out, "w", newline="") if out else contextlib.nullcontext(sys.stdout) as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


__all__ = ["base_parser", "config_from", "datasets", "path_accuracies", "loss_window", "progress", "write_rows",
           "pipeline"]
