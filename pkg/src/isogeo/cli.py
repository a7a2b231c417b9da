"""Command-line entry points.

    isogeo verify   [--checks LIST] [--seed N] [--out FILE]
    isogeo compare  --config FILE
    isogeo talign   --config FILE
    isogeo capsweep --config FILE
    isogeo multiscale --config FILE
    isogeo diagnose --model FILE --sigma-grid S [S ...] [--batch N] [--seed N]

Exit codes: 0 success, 1 at least one verification check failed,
2 configuration error.  ISOGEO_THREADS caps the experiment worker count.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import checks as ck
from . import experiments as xp
from .diagnostics import diagnose
from .errors import ConfigError, IsogeoError, ValidationError
from .network import load_params
from .rng import RngState, derive, normal


def _cmd_verify(args) -> int:
    names = None
    if args.checks:
        names = [tok.strip() for tok in args.checks.split(",") if tok.strip()]
    try:
        reports = ck.run_checks(names, seed=args.seed)
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    width = max(len(r.check_id) for r in reports)
    failed = 0
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.check_id:<{width}}  {r.detail}")
        failed += 0 if r.passed else 1
    if args.out:
        ck.write_reports(reports, args.out)
        print(f"wrote {args.out}")
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return 1 if failed else 0


def _cmd_experiment(args) -> int:
    config = xp.parse_config(args.config)
    if config.kind != args.kind:
        raise ConfigError(
            f"config kind {config.kind!r} does not match subcommand {args.kind!r}"
        )
    table = xp.run_experiment(config)
    paths = xp.emit(table, config.outdir)
    for p in paths:
        print(f"wrote {p}")
    if table.failed_rows:
        print(f"failed rows: {table.failed_rows}", file=sys.stderr)
    return 0


def _cmd_diagnose(args) -> int:
    net = load_params(args.model)
    grid = sorted(set(args.sigma_grid))
    if any(s <= 0 for s in grid):
        raise ConfigError("sigma grid values must be > 0")
    x_eval, _ = normal(derive(args.seed, "diagnose-batch"), (args.batch, net.input_dim))
    report = diagnose(
        net,
        x_eval,
        grid,
        derive(args.seed, "diagnose"),
        mc_draws=args.mc_draws,
        run_id=os.path.splitext(os.path.basename(args.model))[0],
    )
    out_json = args.out or (report.run_id + "_diagnostics.json")
    report.to_json(out_json)
    report.to_csv(os.path.splitext(out_json)[0] + ".csv")
    print(f"wrote {out_json}")
    print(f"wrote {os.path.splitext(out_json)[0] + '.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isogeo",
        description="Encoder-geometry laboratory: training objectives, "
        "trajectory diagnostics, and executable identity checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the verification suite")
    p_verify.add_argument("--checks", help="comma-separated check names (default: all)")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", help="write CheckReports JSON here")

    for kind in ("compare", "talign", "capsweep", "multiscale"):
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.set_defaults(kind=kind)

    p_diag = sub.add_parser("diagnose", help="diagnostics report for a saved model")
    p_diag.add_argument("--model", required=True, help="parameter file (flat binary)")
    p_diag.add_argument("--sigma-grid", type=float, nargs="+", required=True)
    p_diag.add_argument("--batch", type=int, default=512)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--mc-draws", type=int, default=64)
    p_diag.add_argument("--out", help="output JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "diagnose":
            return _cmd_diagnose(args)
        return _cmd_experiment(args)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IsogeoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
