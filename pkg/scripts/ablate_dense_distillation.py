"""Dense block-wise distillation versus output-only distillation of the low auxiliary row.

Both variants share the ancestry and the high row. Each low row is turned
into a pool, finetuned with random single-path training and scored on a
held-out split. One CSV row per (variant, path).

    python scripts/ablate_dense_distillation.py [--finetune-steps 300] [--out dense.csv]
"""

import sys
import time

from _common import (
    base_parser,
    config_from,
    datasets,
    loss_window,
    path_accuracies,
    pipeline,
    progress,
    write_rows,
)

from learngene_pool.descendant import evaluate


def main(argv=None) -> int:
    args = base_parser(__doc__).parse_args(argv)
    start = time.perf_counter()
    cfg = config_from(args)
    train, heldout = datasets(cfg, args.heldout_per_class, args.noise)

    ancestry, _ = pipeline.train_ancestry(cfg, train)
    progress(f"ancestry held-out accuracy {evaluate(ancestry, heldout):.3f}", start)
    high = pipeline.distill_row(cfg, ancestry, train, "high")

    rows = []
    for plan in ("dense", "last"):
        vcfg = config_from(args, plan=plan)
        low = pipeline.distill_row(vcfg, ancestry, train, "low")
        drop = 1 - low.trace[-1]["L_dis"] / low.trace[0]["L_dis"]
        # "last" still learns one matrix on the final pair, so TM averages just that one
        pool = pipeline.make_pool(vcfg, low, high, train)
        before = path_accuracies(pool, heldout)
        result = pipeline.finetune(vcfg, pool, train)
        first, last = loss_window(result.trace)
        after = path_accuracies(pool, heldout)
        progress(f"{plan}: L_dis drop {drop:.0%}, L_cls {first:.3f} -> {last:.3f}", start)
        for path_id, acc in after.items():
            rows.append({"plan": plan, "path_id": path_id,
                         "low_accuracy": f"{evaluate(low.aux, heldout):.4f}", "L_dis_drop": f"{drop:.4f}",
                         "acc_before_finetune": f"{before[path_id]:.4f}", "acc_after_finetune": f"{acc:.4f}",
                         "L_cls_first": f"{first:.4f}", "L_cls_last": f"{last:.4f}"})
    write_rows(rows, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
