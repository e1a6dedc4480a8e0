"""Command-line driver: one subcommand per pipeline plus eval/bench/report.

Every training command reads a YAML config, writes ``checkpoint.spdb``,
``metrics.jsonl``, ``summary.json``, and a copy of the config into the
output directory.  Exit codes: 0 success, 2 bad configuration, 3 checkpoint
errors.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .encoder import count_encoder_params
from .errors import CheckpointError, ConfigError, SparseKdError
from .metrics import write_metrics
from .pipelines import (
    RunResult,
    evaluate,
    finetune_teacher,
    pretrain,
    prune_at_distill,
    prune_at_finetune,
    prune_at_pretrain,
)
from .sparse import benchmark_csv, benchmark_throughput, count_flops


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsekd")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, init=False, teacher=False, out=True):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override train.seed")
        if init:
            sp.add_argument("--init", help="initialization checkpoint")
        if teacher:
            sp.add_argument("--teacher", required=True, help="teacher checkpoint")

    common(sub.add_parser("pretrain", help="masked-token pretraining"))
    common(sub.add_parser("finetune", help="dense fine-tuning (teacher)"), init=True)
    common(sub.add_parser("prune-finetune", help="prune while fine-tuning"), init=True)
    common(sub.add_parser("prune-distill", help="prune while distilling"),
           init=True, teacher=True)
    common(sub.add_parser("prune-pretrain",
                          help="prune during pretraining, then fine-tune frozen"))
    ev = sub.add_parser("eval", help="evaluate a checkpoint on the task dev split")
    common(ev, init=True, out=False)
    ev.add_argument("--split", choices=("dev", "train"), default="dev")
    common(sub.add_parser("bench", help="sparse-path throughput benchmark"), init=True)
    rp = sub.add_parser("report", help="compression report for a finished run")
    rp.add_argument("--run", required=True, help="run directory to summarize")
    return p


def _load_cfg(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None and cfg.train is not None:
        cfg.train.seed = args.seed
    return cfg


def _need(cfg: RunConfig, *sections):
    for s in sections:
        if getattr(cfg, s) is None:
            raise ConfigError("section required by this command", path=s)


def _load_init(args):
    if getattr(args, "init", None):
        return load_checkpoint(args.init)
    return None, None


def _write_run(outdir: Path, cfg_path, result: RunResult, extra: dict,
               started: float) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(outdir / "checkpoint.spdb", result.params, result.mask)
    write_metrics(result.metrics, outdir / "metrics.jsonl")
    shutil.copyfile(cfg_path, outdir / "config.yaml")
    summary = dict(result.summary)
    summary.update(extra)
    summary["wallclock_ms"] = (time.perf_counter() - started) * 1000.0
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps({k: v for k, v in summary.items() if k != "wallclock_ms"},
                     sort_keys=True))


def _compression_extra(cfg: RunConfig, result: RunResult) -> dict:
    counts = count_encoder_params(cfg.encoder)
    extra = {"backbone_params": counts["backbone_total"]}
    if result.mask is not None and cfg.task is not None:
        report = count_flops(cfg.encoder, cfg.task.seq_len, mask=result.mask)
        extra.update({
            "remaining_weight_pct": 100.0 * result.mask.nnz / result.mask.total,
            "flops_dense": report.flops_dense,
            "flops_sparse": report.flops_sparse,
            "param_compression_ratio": report.param_compression_ratio,
            "flops_compression_ratio": report.flops_compression_ratio,
        })
    return extra


def _cmd_pretrain(args):
    cfg = _load_cfg(args)
    _need(cfg, "mlm_task", "train")
    started = time.perf_counter()
    result = pretrain(cfg.encoder, cfg.mlm_task.build(), cfg.train)
    _write_run(Path(args.out), args.config, result, {}, started)


def _cmd_finetune(args):
    cfg = _load_cfg(args)
    _need(cfg, "task", "train")
    init, _ = _load_init(args)
    if init is None:
        raise ConfigError("finetune requires --init (pretrained checkpoint)")
    started = time.perf_counter()
    result = finetune_teacher(init, cfg.task.build(), cfg.train)
    _write_run(Path(args.out), args.config, result, {}, started)


def _cmd_prune_finetune(args):
    cfg = _load_cfg(args)
    _need(cfg, "task", "train")
    init, _ = _load_init(args)
    if init is None:
        raise ConfigError("prune-finetune requires --init (pretrained checkpoint)")
    started = time.perf_counter()
    result = prune_at_finetune(init, cfg.task.build(), cfg.train)
    _write_run(Path(args.out), args.config, result, _compression_extra(cfg, result), started)


def _cmd_prune_distill(args):
    cfg = _load_cfg(args)
    _need(cfg, "task", "train")
    init, _ = _load_init(args)
    if init is None:
        raise ConfigError("prune-distill requires --init (pretrained checkpoint)")
    teacher, _ = load_checkpoint(args.teacher)
    started = time.perf_counter()
    result = prune_at_distill(init, teacher, cfg.task.build(), cfg.train)
    _write_run(Path(args.out), args.config, result, _compression_extra(cfg, result), started)


def _cmd_prune_pretrain(args):
    cfg = _load_cfg(args)
    _need(cfg, "mlm_task", "task", "train")
    started = time.perf_counter()
    result = prune_at_pretrain(cfg.encoder, cfg.mlm_task.build(), cfg.task.build(), cfg.train)
    _write_run(Path(args.out), args.config, result, _compression_extra(cfg, result), started)


def _cmd_eval(args):
    cfg = _load_cfg(args)
    _need(cfg, "task")
    params, mask = _load_init(args)
    if params is None:
        raise ConfigError("eval requires --init (checkpoint to evaluate)")
    splits = cfg.task.build()
    split = splits.dev if args.split == "dev" else splits.train
    out = evaluate(params, split, mask=mask)
    if mask is not None:
        out["remaining_weight_pct"] = 100.0 * mask.nnz / mask.total
    print(json.dumps(out, sort_keys=True))


def _cmd_bench(args):
    cfg = _load_cfg(args)
    from .config import BenchConfig
    bench = cfg.bench or BenchConfig()
    params, _ = _load_init(args)
    if params is None:
        from .encoder import init_params
        params = init_params(cfg.encoder, seed=bench.seed)
    rows = benchmark_throughput(
        params, bench.batch_size, bench.seq_len, bench.ratios,
        repeats=bench.repeats, warmup=bench.warmup, seed=bench.seed,
    )
    csv = benchmark_csv(rows)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "bench.csv").write_text(csv, encoding="utf-8")
    sys.stdout.write(csv)


def _cmd_report(args):
    rundir = Path(args.run)
    cfg = load_run_config(rundir / "config.yaml")
    params, mask = load_checkpoint(rundir / "checkpoint.spdb")
    counts = count_encoder_params(params.config)
    seq_len = cfg.task.seq_len if cfg.task is not None else params.config.max_seq_len
    report = count_flops(params.config, seq_len, mask=mask)
    lines = [
        f"backbone params (dense): {counts['backbone_total']:,}",
        f"backbone params (sparse): {report.params_sparse:,}",
        f"prunable weights: {report.prunable_params_dense:,} -> {report.prunable_params_nnz:,}",
        f"param compression ratio: {report.param_compression_ratio:.2f}x",
        f"flops (dense, {report.flops_per_mac}/MAC, seq {seq_len}): {report.flops_dense:,}",
        f"flops (sparse): {report.flops_sparse:,}",
        f"flops compression ratio: {report.flops_compression_ratio:.2f}x",
    ]
    print("\n".join(lines))
    payload = {
        "backbone_params_dense": counts["backbone_total"],
        "backbone_params_sparse": report.params_sparse,
        "param_compression_ratio": report.param_compression_ratio,
        "flops_dense": report.flops_dense,
        "flops_sparse": report.flops_sparse,
        "flops_compression_ratio": report.flops_compression_ratio,
        "flops_per_mac": report.flops_per_mac,
        "seq_len": seq_len,
        "convention": report.convention,
    }
    with open(rundir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "prune-finetune": _cmd_prune_finetune,
    "prune-distill": _cmd_prune_distill,
    "prune-pretrain": _cmd_prune_pretrain,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3
    except SparseKdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
