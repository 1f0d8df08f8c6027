"""Command-line entry point: ``globalload <command> [options]``.

Settings come from defaults, then an optional INI file (``--config``), then
flags (``--set key=value`` or the dedicated options). Exit status is 0 on
success, 1 on runtime errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import GlobalLoadError
from .pipeline import (
    PipelineConfig,
    read_config_file,
    run_ensemble,
    run_evaluate,
    run_forecast,
    run_generate,
    run_localize,
    run_train_global,
)

log = logging.getLogger("globalload")

# flag name -> PipelineConfig field, per command
_COMMON = {"data": str}
_FLAGS = {
    "generate": {"seed": int, "per_type": int, "weeks": int},
    "train-global": {
        "subsample": int, "width": int, "max_epochs": int, "train_seed": int,
        "train_weeks": int, "val_weeks": int, "test_weeks": int, "batch_size": int, "lr0": float,
    },
    "localize": {"clusters": int, "ft_max_epochs": int, "jobs": int, "subsample": int, "eps": float},
    "ensemble": {},
    "evaluate": {},
    "forecast": {},
}
_POSITIVE = {"per_type", "weeks", "width", "clusters", "subsample", "jobs", "batch_size"}


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="globalload", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--workdir", default=None, help="pipeline working directory")
        p.add_argument("--config", default=None, help="INI file with key = value settings")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        p.add_argument("--log-level", default="INFO")
        for key, kind in {**_COMMON, **flags}.items():
            p.add_argument(
                "--" + key.replace("_", "-"), dest=key, default=None,
                type=_positive_int if key in _POSITIVE else kind,
            )
        if name == "generate":
            p.add_argument("--out", default=None, help="CSV path (default <workdir>/data/series.csv)")
        if name == "localize":
            p.add_argument("--resume", action="store_true", help="keep existing localized models")
        if name == "forecast":
            p.add_argument("--strategy", choices=["ens", "global"], default="ens")
            p.add_argument("--out", default=None)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = cfg.updated(read_config_file(args.config))
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for key in {**_COMMON, **_FLAGS[args.command]}:
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.workdir:
        overrides["workdir"] = args.workdir
    if getattr(args, "out", None) and args.command == "generate":
        overrides["data"] = args.out
    return cfg.updated(overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (KeyError, ValueError) as exc:
        parser.error(str(exc))

    try:
        if args.command == "generate":
            sset = run_generate(cfg)
            log.info("wrote %d series of length %d to %s", sset.N, sset.T, cfg.data_path)
        elif args.command == "train-global":
            run_train_global(cfg)
        elif args.command == "localize":
            store = run_localize(cfg, resume=args.resume)
            log.info("store holds global + %d localized models", len(store.localized))
        elif args.command == "ensemble":
            run_ensemble(cfg)
        elif args.command == "evaluate":
            results = run_evaluate(cfg)
            for (split, strategy), res in results.items():
                log.info("%-10s %-6s MASE %.4f", split, strategy, res.overall["mase"])
        elif args.command == "forecast":
            run_forecast(cfg, args.strategy, args.out)
    except (GlobalLoadError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
