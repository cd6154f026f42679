"""Command-line entry point: one subcommand per pipeline stage plus accounting and checks.

Exit codes: 0 ok, 1 usage, 2 validation (bad config, missing or malformed
artifact), 3 numeric failure (diverged training, failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import fields
from pathlib import Path as FsPath

import numpy as np

from . import __version__, checkpoint, pipeline
from .config import ConfigError, RunConfig, dump_config, load_config
from .data_io import (
    ArchiveError,
    Dataset,
    DatasetFormatError,
    gen_synthetic,
    load_raw_dataset,
    write_raw_dataset,
)
from .descendant import (
    Budget,
    PoolConfig,
    account,
    assemble,
    cost_rows,
    evaluate,
    plan_under_budget,
    rows_to_csv,
)
from .distillation import DistillationError, DistillResult, write_trace_csv
from .genepool import LearngenePool, Path, PoolError, enumerate_paths

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

FINETUNE_COLUMNS = ("step", "epoch", "path", "L_cls", "L_pred", "total")


class UsageError(Exception):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ------------------------------------------------------------------ artifacts


def _workdir(cfg: RunConfig) -> FsPath:
    return FsPath(cfg.workdir)


def _outdir(cfg: RunConfig) -> FsPath:
    wd = _workdir(cfg)
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _data_file(cfg: RunConfig) -> FsPath:
    return FsPath(cfg.data_path) if cfg.data_path else _workdir(cfg) / "data.lgds"


def _require(path: FsPath) -> FsPath:
    if not path.is_file():
        raise MissingArtifactError(f"missing prerequisite artifact: {path}")
    return path


def _sha256(path: FsPath) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    import yaml

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pyyaml": yaml.__version__, "learngene_pool": __version__}


def _write_manifest(command: str, cfg: RunConfig, outputs: list[FsPath], inputs: list[FsPath] = ()) -> FsPath:
    """Reproducibility record next to the first output: config, hash, seed, versions, file digests."""
    record = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": _versions(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    target = outputs[0].with_name(outputs[0].name + ".manifest.json")
    target.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return target


def _meta(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config": cfg.to_dict(), "config_hash": cfg.hash()}


def _load_data(cfg: RunConfig) -> tuple[Dataset, FsPath]:
    path = _require(_data_file(cfg))
    return load_raw_dataset(path), path


def _load_kind(path: FsPath, kind: str, with_manifest: bool = False):
    obj, manifest = checkpoint.load(_require(path))
    if manifest.get("kind") != kind:
        raise ArchiveError(f"{path}: expected a {kind!r} checkpoint, found {manifest.get('kind')!r}")
    return (obj, manifest) if with_manifest else obj


def _trainable(cfg: RunConfig) -> None:
    if cfg.profile != "mini":
        raise ConfigError("profile", f"profile {cfg.profile!r} is accounting-only; training stages need 'mini'")


def _say(msg: str) -> None:
    print(msg, flush=True)


# ------------------------------------------------------------------ stages


def cmd_gen_data(cfg: RunConfig, args) -> int:
    prof = cfg.profile_obj()
    ds = gen_synthetic(cfg.num_classes, cfg.samples_per_class, prof.image_size, cfg.data_seed)
    out = _data_file(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_raw_dataset(ds, out)
    _write_manifest("gen-data", cfg, [out])
    _say(f"wrote {out} ({len(ds)} samples, {ds.num_classes} classes)")
    return EXIT_OK


def cmd_train_ancestry(cfg: RunConfig, args) -> int:
    _trainable(cfg)
    data, data_path = _load_data(cfg)
    model, trace = pipeline.train_ancestry(
        cfg, data, log=lambda r: _say(f"ancestry epoch {r['epoch']}: L_cls={r['L_cls']:.4f}"))
    wd = _outdir(cfg)
    ckpt, csv_path = wd / "ancestry.lgck", wd / "ancestry_trace.csv"
    checkpoint.save(model, ckpt, metadata={**_meta(cfg, "train-ancestry"), "trace": trace}, seed=cfg.seed,
                    normalization=data.normalization())
    write_trace_csv(trace, csv_path, columns=("epoch", "L_cls"))
    _write_manifest("train-ancestry", cfg, [ckpt, csv_path], [data_path])
    _say(f"train accuracy {evaluate(model, data):.4f}; wrote {ckpt}")
    return EXIT_OK


def cmd_distill_aux(cfg: RunConfig, args) -> int:
    _trainable(cfg)
    data, data_path = _load_data(cfg)
    wd = _workdir(cfg)
    anc_path = wd / "ancestry.lgck"
    ancestry = _load_kind(anc_path, "vit")
    rows = pipeline.ROWS if args.row == "both" else (args.row,)
    for row in rows:
        seed = pipeline.aux_seed(cfg, row)
        _say(f"distilling {row} auxiliary")
        result = pipeline.distill_row(
            cfg, ancestry, data, row,
            log=lambda r, row=row: _say(f"{row} epoch {r['epoch']}: L_dis={r['L_dis']:.4f} "
                                        f"L_cls={r['L_cls']:.4f} total={r['total']:.4f}"))
        pairs = [list(m.source_pair) for m in result.block_matrices]
        ckpt, csv_path = wd / f"aux_{row}.lgck", wd / f"aux_{row}_trace.csv"
        meta = {**_meta(cfg, "distill-aux"), "row": row, "plan": pairs}
        checkpoint.save(result, ckpt, metadata=meta, seed=seed, normalization=data.normalization())
        write_trace_csv(result.trace, csv_path)
        _write_manifest("distill-aux", cfg, [ckpt, csv_path], [data_path, anc_path])
        _say(f"wrote {ckpt}")
    return EXIT_OK


def cmd_build_pool(cfg: RunConfig, args) -> int:
    _trainable(cfg)
    wd = _workdir(cfg)
    low_path, high_path = wd / "aux_low.lgck", wd / "aux_high.lgck"
    low, low_manifest = _load_kind(low_path, "aux", with_manifest=True)
    high: DistillResult = _load_kind(high_path, "aux")
    inputs = [low_path, high_path]
    data = None
    if cfg.stitch_init == "ls":
        data, data_path = _load_data(cfg)
        inputs.append(data_path)
    pool = pipeline.make_pool(cfg, low, high, data)
    out = wd / "pool.lgck"
    checkpoint.save(pool, out, metadata=_meta(cfg, "build-pool"), seed=cfg.seed,
                    normalization=low_manifest.get("normalization"))
    _write_manifest("build-pool", cfg, [out], inputs)
    _say(f"pool depth {pool.depth}, {len(pool.stitches)} stitches ({cfg.stitch_init}); wrote {out}")
    return EXIT_OK


def cmd_finetune_pool(cfg: RunConfig, args) -> int:
    _trainable(cfg)
    data, data_path = _load_data(cfg)
    wd = _workdir(cfg)
    pool_path = wd / "pool.lgck"
    pool: LearngenePool = _load_kind(pool_path, "pool")
    inputs = [data_path, pool_path]
    teacher = None
    if cfg.teacher:
        anc_path = wd / "ancestry.lgck"
        teacher = _load_kind(anc_path, "vit")
        inputs.append(anc_path)
    result = pipeline.finetune(cfg, pool, data, teacher=teacher)
    trace = result.trace
    out, csv_path = wd / "pool_finetuned.lgck", wd / "finetune_trace.csv"
    checkpoint.save(pool, out, metadata=_meta(cfg, "finetune-pool"), seed=cfg.seed,
                    normalization=data.normalization())
    with open(csv_path, "w", newline="") as fh:
        fh.write(rows_to_csv(trace, FINETUNE_COLUMNS))
    _write_manifest("finetune-pool", cfg, [out, csv_path], inputs)
    if trace:
        head = np.mean([r["L_cls"] for r in trace[:50]])
        tail = np.mean([r["L_cls"] for r in trace[-50:]])
        _say(f"{len(trace)} steps; mean L_cls first 50 {head:.4f}, last 50 {tail:.4f}")
    _say(f"wrote {out}")
    return EXIT_OK


def _pool_file(cfg: RunConfig, explicit: str | None) -> FsPath:
    if explicit:
        return FsPath(explicit)
    tuned = _workdir(cfg) / "pool_finetuned.lgck"
    return tuned if tuned.is_file() else _workdir(cfg) / "pool.lgck"


def cmd_assemble(cfg: RunConfig, args) -> int:
    pool_path = _pool_file(cfg, args.pool_file)
    pool, pool_manifest = _load_kind(pool_path, "pool", with_manifest=True)
    path = Path.parse(args.path)
    path.validate(pool.depth)
    model = assemble(pool, path)
    out = FsPath(args.out) if args.out else _workdir(cfg) / f"descendant_{path.id}.lgck"
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(model, out, metadata=_meta(cfg, "assemble"), seed=cfg.seed,
                    normalization=pool_manifest.get("normalization"))
    _write_manifest("assemble", cfg, [out], [pool_path])
    cost = account(PoolConfig.from_pool(pool), path)
    _say(f"{path.id}: {cost.params} params, {cost.flops} flops; wrote {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    data, data_path = _load_data(cfg)
    if args.checkpoint:
        ck = _require(FsPath(args.checkpoint))
        obj, manifest = checkpoint.load(ck)
        if isinstance(obj, DistillResult):
            obj = obj.aux
        if isinstance(obj, LearngenePool):
            raise UsageError("eval --checkpoint takes a model; omit it to evaluate every path of the pool")
        acc = evaluate(obj, data)
        _say(f"accuracy {acc:.6f}")
        return EXIT_OK
    pool_path = _require(_pool_file(cfg, args.pool_file))
    pool = _load_kind(pool_path, "pool")
    pcfg = PoolConfig.from_pool(pool)
    rows = cost_rows(pcfg, enumerate_paths(pool, cfg.path_mode))
    for row in rows:
        row["accuracy"] = repr(evaluate(assemble(pool, Path(row["k"], row["m"])), data))
    text = rows_to_csv(rows, ("path_id", "k", "m", "params", "flops", "accuracy"))
    out = FsPath(args.out) if args.out else _outdir(cfg) / "eval.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    _write_manifest("eval", cfg, [out], [pool_path, data_path])
    sys.stdout.write(text)
    return EXIT_OK


def _accounting_config(cfg: RunConfig, pool_size: int | None) -> PoolConfig:
    prof = cfg.profile_obj()
    depth = pool_size // 2 if pool_size else None
    if pool_size is not None and (pool_size < 2 or pool_size % 2):
        raise ConfigError("pool", f"pool size must be a positive even number, got {pool_size}")
    return PoolConfig.from_profile(prof, depth)


def _emit_csv(cfg: RunConfig, text: str, out: str | None, command: str) -> None:
    if out:
        p = FsPath(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        _write_manifest(command, cfg, [p])
    sys.stdout.write(text)


def cmd_enumerate(cfg: RunConfig, args) -> int:
    pcfg = _accounting_config(cfg, args.pool)
    mode = args.mode or cfg.path_mode
    l = pcfg.depth
    rows = [{"path_id": p.id, "k": p.k, "m": p.m, "depth": p.depth(l), "stitch": int(p.uses_stitch(l))}
            for p in enumerate_paths(l, mode)]
    _emit_csv(cfg, rows_to_csv(rows, ("path_id", "k", "m", "depth", "stitch")), args.out, "enumerate")
    return EXIT_OK


def cmd_account(cfg: RunConfig, args) -> int:
    pcfg = _accounting_config(cfg, args.pool)
    paths = enumerate_paths(pcfg.depth, args.mode or cfg.path_mode)
    _emit_csv(cfg, rows_to_csv(cost_rows(pcfg, paths)), args.out, "account")
    return EXIT_OK


def _amount(text: str) -> float:
    """'10.5M' -> 10.5e6, '3G' -> 3e9, plain numbers pass through."""
    units = {"k": 1e3, "K": 1e3, "M": 1e6, "G": 1e9}
    t = text.strip()
    try:
        if t and t[-1] in units:
            return float(t[:-1]) * units[t[-1]]
        return float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an amount: {text!r}") from None


def cmd_plan(cfg: RunConfig, args) -> int:
    if args.max_params is None and args.max_flops is None:
        raise UsageError("plan needs --max-params, --max-flops or both")
    pcfg = _accounting_config(cfg, args.pool)
    accuracy = None
    if args.accuracy_csv:
        with open(_require(FsPath(args.accuracy_csv)), newline="") as fh:
            accuracy = {row["path_id"]: float(row["accuracy"]) for row in csv.DictReader(fh)}
    result = plan_under_budget(pcfg, Budget(args.max_params, args.max_flops), args.mode or cfg.path_mode,
                               accuracy=accuracy)
    if not result.feasible:
        p, c = result.smallest
        print(f"no path fits the budget; smallest is {p.id} with {c.params} params, {c.flops} flops",
              file=sys.stderr)
    rows = [{"rank": i + 1, "path_id": p.id, "k": p.k, "m": p.m, "params": c.params, "flops": c.flops}
            for i, (p, c) in enumerate(result.ranked)]
    _emit_csv(cfg, rows_to_csv(rows, ("rank", "path_id", "k", "m", "params", "flops")), args.out, "plan")
    return EXIT_OK if result.feasible else EXIT_VALIDATION


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .verify import TOLERANCE, run_all

    results = run_all(cfg.seed)
    worst = 0.0
    for name, err in results.items():
        ok = err < TOLERANCE
        worst = max(worst, err)
        _say(f"{'PASS' if ok else 'FAIL'} {name}: max relative error {err:.3e}")
    _say(f"worst {worst:.3e} (tolerance {TOLERANCE:.0e})")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERIC


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic dataset as a raw binary file"),
    "train-ancestry": (cmd_train_ancestry, "train the ancestry (teacher) model on the dataset"),
    "distill-aux": (cmd_distill_aux, "distill the low and/or high auxiliary models from the ancestry"),
    "build-pool": (cmd_build_pool, "collect auxiliary blocks into a pool and initialise stitches"),
    "finetune-pool": (cmd_finetune_pool, "random single-path training of the pool"),
    "enumerate": (cmd_enumerate, "list pool paths"),
    "account": (cmd_account, "params / FLOPs per path as CSV"),
    "plan": (cmd_plan, "rank paths that fit a parameter / FLOPs budget"),
    "assemble": (cmd_assemble, "materialise one path as a standalone descendant model"),
    "eval": (cmd_eval, "top-1 accuracy of a model checkpoint or of every pool path"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every op and the distillation objective"),
}


def _config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("configuration (override the config file)")
    g.add_argument("--config", help="YAML run configuration")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            g.add_argument(flag, dest=f.name, default=argparse.SUPPRESS,
                           type=lambda s: {"true": True, "false": False, "1": True, "0": False}[s.lower()],
                           metavar="{true,false}")
        else:
            base = f.type.replace("| None", "").strip()
            g.add_argument(flag, dest=f.name, default=argparse.SUPPRESS,
                           type={"int": int, "float": float, "str": str}[base])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="learngene-pool", description="Learngene pool: distill, pool, stitch and assemble ViTs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _config_flags(p)
        if name in ("enumerate", "account", "plan"):
            p.add_argument("--pool", type=int, help="pool size (blocks across both rows); default 2 x aux depth")
            p.add_argument("--mode", choices=("table", "general"), help="path family (default: path_mode)")
            p.add_argument("--out", help="also write the CSV here")
        if name == "plan":
            p.add_argument("--max-params", type=_amount, help="parameter budget, e.g. 10M")
            p.add_argument("--max-flops", type=_amount, help="FLOPs budget, e.g. 2.5G")
            p.add_argument("--accuracy-csv", help="rank by the accuracy column of an eval CSV instead of size")
        if name == "distill-aux":
            p.add_argument("--row", choices=("low", "high", "both"), default="both")
        if name in ("assemble", "eval"):
            p.add_argument("--pool-file", help="pool checkpoint (default: finetuned pool if present)")
            p.add_argument("--out", help="output path")
        if name == "assemble":
            p.add_argument("--path", required=True, help="path id, e.g. k2m3")
        if name == "eval":
            p.add_argument("--checkpoint", help="evaluate this model checkpoint instead of the pool")
    return parser


_OWN_ARGS = {"command", "config", "pool", "mode", "out", "max_params", "max_flops", "row", "pool_file", "path",
             "checkpoint", "accuracy_csv"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in _OWN_ARGS}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for line in dump_config(cfg).splitlines():
        print(f"# {line}")
    sys.stdout.flush()
    handler = COMMANDS[args.command][0]
    try:
        return handler(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MissingArtifactError, ArchiveError, DatasetFormatError, PoolError, DistillationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
