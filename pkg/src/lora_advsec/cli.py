"""Command-line interface.

Each subcommand runs one pipeline stage against an output directory; ``run``
executes the whole chain. Exit codes: 0 success, 1 for anything wrong with
the inputs (config, flags, malformed or missing files), 2 for a failure
while doing the work.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from lora_advsec.attacks import KINDS, SCOPES
from lora_advsec.data import convert_raw_f32, save_dataset
from lora_advsec.errors import ConfigError, FormatError
from lora_advsec.pipeline import (
    StageError,
    load_config,
    run_pipeline,
    stage_attack,
    stage_defend,
    stage_gen_data,
    stage_report,
    stage_spoof,
    stage_train,
)

_INPUT_ERRORS = (ConfigError, FormatError, FileNotFoundError, IsADirectoryError)


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; bad flags are an input problem
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lora-advsec",
                     description="Adversarial attack and defense experiments "
                                 "on LoRa-style I/Q classifiers.")
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="JSON config merged over the defaults")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", default="out",
                        help="artifact directory (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    gen = sub.add_parser("gen-data", parents=[common],
                         help="synthesize legitimate transmissions")
    gen.add_argument("--from-raw-f32", metavar="FILE", dest="from_raw_f32",
                     help="convert an interleaved I,Q float32 capture "
                          "(32 pairs per record) into dataset.iq instead")
    gen.add_argument("--device", type=int, default=0, choices=(0, 1),
                     help="device label for converted records")
    gen.add_argument("--authenticity", type=int, default=0, choices=(0, 1),
                     help="authenticity label for converted records")

    sub.add_parser("spoof", parents=[common],
                   help="KDE-spoof rogue records and score fidelity")
    sub.add_parser("train", parents=[common],
                   help="train the configured classifiers")

    atk = sub.add_parser("attack", parents=[common],
                         help="evaluate attack success over the PSR grid")
    atk.add_argument("--psr", type=float, metavar="DB",
                     help="single PSR point instead of the grid")
    atk.add_argument("--scope", choices=SCOPES, help="single attack scope")
    atk.add_argument("--kind", choices=KINDS, help="single attack kind")

    sub.add_parser("defend", parents=[common],
                   help="adversarially retrain and re-evaluate")
    sub.add_parser("report", parents=[common],
                   help="write clean-accuracy tables")
    sub.add_parser("run", parents=[common], help="run the full pipeline")
    return parser


def _dispatch(args, cfg, out: Path) -> None:
    if args.command == "run":
        run_pipeline(cfg, out)
        return
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "gen-data":
        if args.from_raw_f32:
            data = convert_raw_f32(args.from_raw_f32, device=args.device,
                                   authenticity=args.authenticity)
            save_dataset(data, out / "dataset.iq")
        else:
            stage_gen_data(cfg, out)
    elif args.command == "spoof":
        stage_spoof(cfg, out)
    elif args.command == "train":
        stage_train(cfg, out)
    elif args.command == "attack":
        narrowed = (args.psr is not None or args.scope is not None
                    or args.kind is not None)
        stage_attack(
            cfg, out,
            psr_grid=[args.psr] if args.psr is not None else None,
            scopes=[args.scope] if args.scope is not None else None,
            kinds=[args.kind] if args.kind is not None else None,
            append=narrowed and (out / "asp_curves.csv").exists())
    elif args.command == "defend":
        stage_defend(cfg, out)
    elif args.command == "report":
        stage_report(cfg, out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        _dispatch(args, cfg, Path(args.out))
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc.__cause__, _INPUT_ERRORS) else 2
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report, don't crash
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
