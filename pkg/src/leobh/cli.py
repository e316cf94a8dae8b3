"""Command-line entry point: ``leobh <subcommand> [--config F] [--seed N] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import runner
from .errors import LeoBHError


def _config(args) -> runner.ScenarioConfig:
    cfg = runner.load_config(args.config) if args.config else runner.ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return cfg


def _height(args):
    cfg = _config(args)
    res = runner.run_orbit_height_sweep(cfg, args.threads)
    out = Path(cfg.output_dir)
    path = runner.emit_csv(res, out / "height_sweep.csv")
    runner.emit_timing_csv(res, out / "height_sweep_timing.csv")
    runner.write_plot_stub(path, "orbit height (km)")
    _report(res)
    return path


def _snapshot(args):
    cfg = _config(args)
    res = runner.run_snapshot_sweep(cfg, args.threads)
    out = Path(cfg.output_dir)
    path = runner.emit_csv(res, out / "snapshot_sweep.csv")
    runner.emit_timing_csv(res, out / "snapshot_sweep_timing.csv")
    runner.write_plot_stub(path, "snapshot")
    n = 4 if 4 in cfg.n_pos else cfg.n_pos[0]
    runner.emit_snr_csv(runner.snr_table(res, n), out / "snr_table.csv")
    _report(res)
    return path


def _table2(args):
    cfg = _config(args)
    table = runner.run_table2(cfg, args.threads)
    path = runner.emit_snr_csv(table, Path(cfg.output_dir) / "snr_table.csv")
    for name, vals in table.items():
        print(f"{name:10s} " + " ".join(f"{v:7.1f}" for v in vals))
    return path


def _validate(args):
    cfg = _config(args)
    print(f"ok: J={cfg.J} S={cfg.S} heights={list(cfg.heights)} seed={cfg.seed}")
    return None


def _report(res):
    for r in res.rows:
        print(f"{r.sweep_value:8g} {r.algorithm:10s} N={r.n_pos} "
              f"crlb={r.avg_crlb_m:.4g} m covered={r.covered_users}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leobh", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    cmds = {
        "height-sweep": (_height, "average CRLB versus orbit height"),
        "snapshot-sweep": (_snapshot, "average CRLB versus time snapshot"),
        "table2": (_table2, "mean SNR per positioning satellite"),
        "validate-config": (_validate, "parse and validate a config file"),
    }
    for name, (fn, help_) in cmds.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="TOML config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    try:
        path = args.func(args)
    except LeoBHError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if path is not None:
        print(f"wrote {path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
