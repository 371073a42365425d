"""Command-line entry point: ``proxguide <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..ddim import ConvergenceError
from .config import ConfigError, load_config
from .io import fmt, write_csv
from .runner import COMMANDS, PipelineError, run
from .sweeps import SWEEPS, prox_table, run_sweep

__all__ = ["main", "build_parser", "overrides_from_args"]

log = logging.getLogger("proxguide")

MODES = ("source", "joint", "none")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors: single line, exit code 1."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(sweep: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML config file or a previous run's manifest.json")
    p.add_argument("--out", help="output directory (default: $PROX_OUT_DIR, else ./out/<command>)")
    p.add_argument("--seed", type=int, required=sweep, help="source-latent seed")
    p.add_argument("--steps", type=int, help="number of sampling steps")
    p.add_argument("--inversion", choices=("naive", "exact"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _threshold_flags(p):
    p.add_argument("--prox", choices=("l0", "l1", "none"))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--quantile", type=float, metavar="Q")
    g.add_argument("--lambda", dest="lam", type=float, metavar="L")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxguide", description="Proximal-guidance editing experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run_common, sweep_common = _common(False), _common(True)

    sub.add_parser("invert", parents=[run_common], help="invert the source latent")
    sub.add_parser("reconstruct", parents=[run_common], help="invert then reconstruct")

    p = sub.add_parser("edit", parents=[run_common], help="proximal negative-prompt edit")
    p.add_argument("--w", type=float)
    _threshold_flags(p)
    p.add_argument("--recon", action="store_true", default=None, help="enable reconstruction guidance")
    p.add_argument("--eta", type=float)
    p.add_argument("--t-rec", dest="t_rec", type=int)

    p = sub.add_parser("nti", parents=[run_common], help="null-condition optimization")
    p.add_argument("--w", type=float)
    p.add_argument("--inner-iters", dest="inner_iters", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("masactrl", parents=[run_common], help="dual-branch attention-control edit")
    p.add_argument("--w", type=float)
    _threshold_flags(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--inject-uncond", dest="inject_uncond", choices=MODES)
    p.add_argument("--inject-cond", dest="inject_cond", choices=MODES)
    p.add_argument("--inject-start-step", dest="inject_start_step", type=int)
    p.add_argument("--capture-condition", dest="capture_condition", choices=("src", "null"))

    for name in SWEEPS:
        sub.add_parser(name, parents=[sweep_common], help=f"{name} sweep over the canonical scenario")

    p = sub.add_parser("prox-table", help="closed-form prox operators vs brute-force minimization")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--grid-step", dest="grid_step", type=float, default=1e-4)
    p.add_argument("--csv", help="also write the table to this CSV path")
    return parser


_GUIDANCE_FLAGS = {"w": "w", "prox": "prox", "quantile": "quantile", "lam": "lambda",
                   "recon": "recon", "eta": "eta", "t_rec": "t_rec"}
_NTI_FLAGS = ("inner_iters", "lr")
_MASACTRL_FLAGS = ("alpha", "inject_uncond", "inject_cond", "inject_start_step", "capture_condition")


def overrides_from_args(args) -> dict:
    """Collect explicitly given flags into a nested config override."""
    ns = vars(args)
    out: dict = {}
    for key in ("seed", "steps", "inversion"):
        if ns.get(key) is not None:
            out[key] = ns[key]
    for section, mapping in (("guidance", _GUIDANCE_FLAGS),
                             ("nti", {k: k for k in _NTI_FLAGS}),
                             ("masactrl", {k: k for k in _MASACTRL_FLAGS})):
        vals = {dst: ns[src] for src, dst in mapping.items() if ns.get(src) is not None}
        if vals:
            out[section] = vals
    if args.command == "masactrl":
        out["predictor"] = "attention"
    return out


def _out_dir(args) -> str:
    if args.out:
        return args.out
    base = os.environ.get("PROX_OUT_DIR")
    return base if base else os.path.join("out", args.command)


def _prox_table(args) -> int:
    rows = prox_table(n=args.n, seed=args.seed, grid_step=args.grid_step)
    header = ["lambda", "n", "soft_max_dev", "hard_max_dev", "grid_step"]
    print(",".join(header))
    for r in rows:
        print(",".join(fmt(r[h]) for h in header))
    if args.csv:
        write_csv(args.csv, header, rows)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "prox-table":
        return _prox_table(args)
    try:
        cfg = load_config(args.config, overrides_from_args(args))
        out = _out_dir(args)
        if args.command in COMMANDS:
            manifest = run(args.command, cfg, out)
        else:
            manifest = run_sweep(args.command, cfg, out)
    except (ConfigError, ValueError) as exc:
        print(f"proxguide: config error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except (PipelineError, ConvergenceError, ArithmeticError) as exc:
        print(f"proxguide: numerical failure: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    for key, val in sorted(manifest["summary"].items()):
        print(f"{key}: {val}")
    print(f"wrote {len(manifest['outputs'])} files to {out}")
    return 0
