"""Command-line entry point: ``lsibound <subcommand> [--config F] [--seed N] [--out DIR] [--override k=v ...]``.

Exit status: 0 success, 1 invalid input or configuration, 2 numerical or
constraint error, 3 when ``verify`` finds a failing check.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from ..errors import InvalidInputError, LsiBoundError, NumericalError
from . import experiments
from .config import load_config
from .io import ResultRecord, jsonable, persist

log = logging.getLogger("lsibound")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
SUBCOMMANDS = {
    "gen-data": "sample the synthetic mixture and write train/test CSV files",
    "train": "train the configured network with SGD and save a checkpoint",
    "estimate": "prior-averaged loss and gradient-norm statistics",
    "bound": "evaluate one PAC-Bayes bound",
    "compare": "our bound against the bounded-loss baseline on one model",
    "sweep": "complexity over a lambda, depth or prior-variance grid (or all figure tables)",
    "verify": "run the numerical identity suite",
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; here those are input errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lsibound", description="PAC-Bayes bounds via log-Sobolev inequalities.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="repeatable config override")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _emit(records, out) -> None:
    for rec in records:
        print(rec.to_json())
    for path in persist(records, out):
        log.info("appended to %s", path)


def _dispatch(args) -> int:
    cfg = load_config(args.config, args.override, seed=args.seed, out=args.out)
    out = cfg["out"]
    h = cfg.config_hash()
    cmd = args.command
    t0 = time.perf_counter()

    if cmd == "gen-data":
        payload = experiments.gen_data(cfg, out)
        print(json.dumps(jsonable(payload), sort_keys=True))
        return EXIT_OK
    if cmd == "train":
        payload, wall = experiments.run_train(cfg, out)
        _emit([ResultRecord("train-trace", payload, h, wall_time=wall)], out)
        return EXIT_OK
    if cmd == "estimate":
        payload = experiments.run_estimate(cfg)
        _emit([ResultRecord("sweep-row", {"estimate": payload}, h, wall_time=time.perf_counter() - t0)], out)
        return EXIT_OK
    if cmd == "bound":
        report = experiments.run_bound(cfg)
        _emit([ResultRecord("bound", report.to_dict(), h, wall_time=time.perf_counter() - t0)], out)
        return EXIT_OK
    if cmd == "compare":
        ours, base = experiments.run_compare(cfg)
        wall = time.perf_counter() - t0
        _emit([ResultRecord("bound", r.to_dict(), h, wall_time=wall) for r in (ours, base)], out)
        return EXIT_OK
    if cmd == "sweep":
        rows, summary = experiments.run_sweep(cfg, out)
        wall = time.perf_counter() - t0
        records = [ResultRecord("sweep-row", {"sweep": summary["kind"], **row}, h) for row in rows]
        _emit(records, out)
        print(json.dumps(jsonable({"summary": summary, "wall_time": wall}), sort_keys=True))
        return EXIT_OK
    if cmd == "verify":
        from .verify import run_suite

        results = run_suite(cfg["seed"], cfg["verify.n"], cfg["verify.grid_points"])
        wall = time.perf_counter() - t0
        _emit([ResultRecord("verify", r, h, wall_time=wall) for r in results], out)
        return EXIT_OK if all(r["passed"] for r in results) else EXIT_VERIFY
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("lsibound: error: a subcommand is required", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (NumericalError, ArithmeticError) as exc:
        print(f"lsibound: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LsiBoundError, InvalidInputError, ValueError, OSError) as exc:
        print(f"lsibound: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
