"""Stitch initialisation (TM, least squares, random) crossed with an optional ancestry teacher.

The distilled rows are trained once; every variant starts from the same
rows and differs only in stitch initialisation and finetuning loss. Reports
early/late L_cls and mean table-path accuracy on a held-out split.

    python scripts/ablate_stitch_init.py [--finetune-steps 300] [--out stitch.csv]
"""

import sys
import time

import numpy as np
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


def main(argv=None) -> int:
    args = base_parser(__doc__).parse_args(argv)
    start = time.perf_counter()
    cfg = config_from(args)
    train, heldout = datasets(cfg, args.heldout_per_class, args.noise)

    ancestry, _ = pipeline.train_ancestry(cfg, train)
    low = pipeline.distill_row(cfg, ancestry, train, "low")
    high = pipeline.distill_row(cfg, ancestry, train, "high")
    progress("rows distilled", start)

    rows = []
    for init in ("tm", "ls", "random"):
        for teacher in (False, True):
            vcfg = config_from(args, stitch_init=init, teacher=teacher)
            pool = pipeline.make_pool(vcfg, low, high, train)
            before = path_accuracies(pool, heldout)
            result = pipeline.finetune(vcfg, pool, train, teacher=ancestry)
            first, last = loss_window(result.trace)
            after = path_accuracies(pool, heldout)
            rows.append({"stitch_init": init, "teacher": teacher,
                         "mean_acc_before": f"{np.mean(list(before.values())):.4f}",
                         "mean_acc_after": f"{np.mean(list(after.values())):.4f}",
                         "min_acc_after": f"{min(after.values()):.4f}",
                         "L_cls_first": f"{first:.4f}", "L_cls_last": f"{last:.4f}"})
            progress(f"{init} teacher={teacher}: L_cls {first:.3f} -> {last:.3f}, "
                     f"mean acc {rows[-1]['mean_acc_after']}", start)
    write_rows(rows, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
