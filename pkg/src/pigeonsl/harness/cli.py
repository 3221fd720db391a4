"""Command-line entry point: ``pigeonsl run|check-overheads|selftest``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, load_config
from .runner import overhead_report, run_experiment
from .selftest import run_selftest


def _load(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    if getattr(args, "rounds", None) is not None:
        changes["T"] = args.rounds
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out or cfg.output
    if not out:
        print("no output directory: pass --out or set 'output' in the config", file=sys.stderr)
        return 2
    result = run_experiment(cfg, out_dir=out)
    if result.records:
        last = result.records[-1]
        print(f"{cfg.mode}: {len(result.records)} rounds, final test accuracy {last.test_accuracy:.4f}")
    print(f"wrote {out}/rounds.csv, ledger.csv, summary.txt")
    return 0


def cmd_check_overheads(args) -> int:
    cfg = _load(args)
    result = run_experiment(cfg)
    print(f"mode={cfg.mode} M={cfg.M} R={cfg.R} T={cfg.T} D~={cfg.E * cfg.B} D_o={cfg.dataset.D_o} "
          f"d_c={cfg.arch.d_c} d_CL={cfg.arch.d_cl}")
    print(f"{'quantity':<18}{'expected':>16}{'simulated':>16}")
    ok = True
    for name, exp, sim in overhead_report(result):
        ok &= exp == sim
        print(f"{name:<18}{exp:>16}{sim:>16}  {'ok' if exp == sim else 'MISMATCH'}")
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pigeonsl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v: per-round log, -vv: per-mini-batch log")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=MODES)
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check-overheads", help="compare simulated traffic with the closed forms")
    chk.add_argument("config")
    chk.add_argument("--seed", type=int)
    chk.add_argument("--mode", choices=MODES)
    chk.add_argument("--rounds", type=int, help="override T")
    chk.set_defaults(func=cmd_check_overheads)

    st = sub.add_parser("selftest", help="run the built-in oracle checks")
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
