"""
Decode visual-search targets from simulated gaze.

    gazedecode [--config PATH] [--seed N] [--out DIR] [--set key=value ...] COMMAND [options]

Commands: gen-data, train-encoder, train-cvae, simulate, decode, evaluate,
ablate. Exit status is 0 on success, 2 on configuration or usage errors and
3 on data or model errors.
"""

import argparse
import logging
import sys

from . import pipeline
from .errors import ConfigError, GazeDecodeError
from .stimuli import CATEGORIES

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

COMMANDS = {
    "gen-data": pipeline.run_gen_data,
    "train-encoder": pipeline.run_train_encoder,
    "train-cvae": pipeline.run_train_cvae,
    "simulate": pipeline.run_simulate,
    "decode": pipeline.run_decode,
    "evaluate": pipeline.run_evaluate,
    "ablate": pipeline.run_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gazedecode", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="JSON config to start from (e.g. a saved config.json)")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--out", default="runs/default", help="output root (default: %(default)s)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value, e.g. gaze.sigma=12")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="render the synthetic exemplar splits")
    sub.add_parser("train-encoder", help="train the gaze encoder and the oracle encoder")
    sub.add_parser("train-cvae", help="train the conditional VAE")

    p = sub.add_parser("simulate", help="simulate search sessions for one category")
    p.add_argument("--category", choices=CATEGORIES)
    p.add_argument("--collages", type=int)
    p.add_argument("--participants", type=int)

    p = sub.add_parser("decode", help="encode a session and decode search-target images")
    p.add_argument("--session", help="session directory (relative to --out or absolute)")
    p.add_argument("--k", choices=["1", "2", "3", "all"])
    p.add_argument("--mode", choices=["local", "global"])
    p.add_argument("--samples", type=int)
    p.add_argument("--name", help="output subdirectory under decode/")

    p = sub.add_parser("evaluate", help="oracle recognition study over simulated sessions")
    p.add_argument("--sessions", type=int)
    p.add_argument("--k", choices=["1", "2", "3", "all"])
    p.add_argument("--name", help="output subdirectory (default: evaluate)")

    p = sub.add_parser("ablate", help="paired local-vs-global study with a chi-square test")
    p.add_argument("--trials", type=int)
    p.add_argument("--k", choices=["1", "2", "3", "all"])
    p.add_argument("--name", help="output subdirectory (default: ablate)")
    return parser


_FLAG_KEYS = {
    "category": "simulate.category",
    "collages": "simulate.collages",
    "participants": "simulate.participants",
    "session": "decode.session",
    "k": "decode.k",
    "mode": "decode.mode",
    "samples": "decode.samples",
    "sessions": "evaluate.sessions",
    "trials": "evaluate.trials",
    "name": "evaluate.name",
}


def effective_config(args):
    cfg = pipeline.load_config(args.config) if args.config else pipeline.Config()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("expected KEY=VALUE", item)
        pipeline.set_config_value(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            pipeline.set_config_value(cfg, key, value)
    return cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = effective_config(args)
        COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GazeDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
