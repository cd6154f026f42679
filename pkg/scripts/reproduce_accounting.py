"""Compare analytic path costs of the DeiT-scale pools with the published reference table.

Writes one CSV row per reference entry with relative deviations and exits
non-zero if any entry falls outside the tolerance used by the test suite.

    python scripts/reproduce_accounting.py [--out deviations.csv]
"""

import argparse
import sys
from pathlib import Path as FsPath

sys.path.insert(0, str(FsPath(__file__).resolve().parent.parent / "tests"))

from _common import write_rows  # noqa: E402
from reference_costs import (  # noqa: E402
    FLOP_RTOL,
    PARAM_RTOL,
    POOL12_OFF_SPLIT,
    POOL12_SPLITS,
    POOL18_OFF_SPLIT,
    POOL18_SPLITS,
    split_path,
)

from learngene_pool.descendant import PoolConfig, account  # noqa: E402
from learngene_pool.genepool import Path  # noqa: E402


def reference_rows():
    for size, splits, off in ((12, POOL12_SPLITS, POOL12_OFF_SPLIT), (18, POOL18_SPLITS, POOL18_OFF_SPLIT)):
        for k, n_high, gflops, mparams in splits:
            yield size, split_path(k, n_high, size // 2), gflops, mparams
        for path, gflops, mparams in off:
            yield size, path, gflops, mparams


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="CSV destination (default: stdout)")
    args = ap.parse_args(argv)

    rows = []
    for size, (k, m), gflops, mparams in reference_rows():
        cost = account(PoolConfig.deit(size), Path(k, m))
        p_dev = cost.params / 1e6 / mparams - 1
        f_dev = cost.flops / 1e9 / gflops - 1
        rows.append({"pool": size, "path_id": Path(k, m).id, "params": cost.params, "ref_mparams": mparams,
                     "param_dev": f"{p_dev:+.4f}", "flops": cost.flops, "ref_gflops": gflops,
                     "flop_dev": f"{f_dev:+.4f}", "ok": abs(p_dev) <= PARAM_RTOL and abs(f_dev) <= FLOP_RTOL})

    write_rows(rows, args.out)
    bad = [r["path_id"] for r in rows if not r["ok"]]
    print(f"{len(rows) - len(bad)}/{len(rows)} entries within tolerance", file=sys.stderr)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
