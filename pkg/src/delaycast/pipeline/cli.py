"""``delaycast`` command line.

Every verb prints one JSON object on stdout. Failures print
``{"status": "error", "error": <code>, "message": ...}`` on stderr and
exit with status 1.
"""

import argparse
import json
import logging
import os
import sys

import jsonschema

from ..errors import ConfigError, DelaycastError
from . import config as cfgmod
from . import run as runmod
from .reproduce import FIGURES, reproduce

EXIT_ERROR = 1


def _common(p):
    p.add_argument("--config", help="JSON config file (partial configs merge over the preset)")
    p.add_argument("--preset", choices=("desk", "paper"), help="budget preset (default desk)")
    p.add_argument("--system", choices=("lorenz", "kse"), help="system when no config is given")
    p.add_argument("--seed", type=int, help="train a single model seed instead of the config list")
    p.add_argument("--out", default="delaycast-run", help="run directory")
    p.add_argument("--force", action="store_true",
                   help="recompute existing stages and overwrite a manifest from another config")


def build_parser():
    parser = argparse.ArgumentParser(prog="delaycast",
                                     description="Delay-embedding forecasting experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (("simulate", "generate truth trajectories"),
                       ("embed", "MI / FNN analysis and delay datasets"),
                       ("evaluate", "tracking and long-run statistics of trained models")):
        _common(sub.add_parser(verb, help=text))
    p = sub.add_parser("train", help="train the sweep's models")
    _common(p)
    p.add_argument("--kind", choices=("dts", "node", "recon"), action="append",
                   help="model kind (repeatable; default: all kinds in the config)")
    p = sub.add_parser("rollout", help="forecast from a test-split initial condition")
    _common(p)
    p.add_argument("--model", required=True, help="model header (.json) path")
    p.add_argument("--duration", type=float, required=True, help="time units to forecast")
    p.add_argument("--anchor", type=int, help="test-split sample index of the initial delay vector")
    p.add_argument("--sample-dt", type=float, help="output spacing for NODE models")
    p = sub.add_parser("reproduce", help="figure sweeps written as CSV bundles")
    _common(p)
    p.add_argument("figure", choices=sorted(FIGURES, key=lambda f: int(f[3:])))
    return parser


def resolve_config(args, system=None, L=None):
    """Config from ``--config``/``--preset``/``--seed``.

    ``system`` and ``L`` are imposed by figure targets; a config file for a
    different system is an error there.
    """
    user = {}
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
    if args.seed is not None:
        user["seeds"] = [args.seed]
    if system is not None:
        kind = user.get("system", {}).get("kind", system)
        if kind != system:
            raise ConfigError(f"this target needs a {system} config, got {kind}")
        if L is not None:
            user.setdefault("system", {}).setdefault("params", {})["L"] = L
    try:
        return cfgmod.resolve(user, args.preset, system or args.system)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"invalid config at '{path}': {exc.message}") from None


def apply_threads():
    n = os.environ.get("DELAYCAST_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def dispatch(args):
    if args.verb == "reproduce":
        return reproduce(args.figure, lambda system, L: resolve_config(args, system, L),
                         args.out, args.force)
    run = runmod.Run(resolve_config(args), args.out, args.force)
    if args.verb == "simulate":
        return runmod.simulate(run)
    if args.verb == "embed":
        return runmod.embed(run)
    if args.verb == "train":
        return runmod.train(run, args.kind)
    if args.verb == "rollout":
        return runmod.rollout(run, args.model, args.duration, args.anchor, args.sample_dt)
    return runmod.evaluate(run)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = apply_threads()
    try:
        result = dispatch(args)
    except DelaycastError as exc:
        err = {"status": "error"}
        err.update(exc.to_dict())
        print(json.dumps(err, default=str), file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(json.dumps({"status": "error", "error": type(exc).__name__,
                          "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    finally:
        if limits is not None:
            limits.restore_original_limits()
    for r in result.get("stages", [result]):
        if r.get("status") == "skipped":
            print(f"skip: {r['stage']} is up to date (use --force to recompute)", file=sys.stderr)
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
