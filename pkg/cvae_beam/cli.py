# cvae_beam/cli.py
"""
cvae-beam command line.

  cvae-beam gen-channels [--csv]
  cvae-beam gen-feedback [--channels FILE]
  cvae-beam train-cvae [--scheme {offline,online}]
  cvae-beam beamform --solver {wmmse,stochastic,ezf} [--model FILE] [--slot T]
  cvae-beam reproduce {fig1,fig-offline,fig-online,table1,fig-compare}
  cvae-beam export-csv FILE [--out FILE]

Global flags pick the config (--config, --full-scale) and override the
output root and master seed. Every command prints its report as JSON.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional

from cvae_beam import harness
from cvae_beam.config import OUTPUT_ENV, ExperimentConfig, load_config
from cvae_beam.errors import CvaeBeamError

logger = logging.getLogger("cvae_beam")

REPRODUCE = {
    "fig1": harness.run_motivation,
    "fig-offline": harness.run_offline_scheme,
    "fig-online": harness.run_online_scheme,
    "table1": harness.run_table1,
    "fig-compare": harness.run_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvae-beam", description="Limited-feedback robust beamforming experiments")
    ap.add_argument("--config", help="YAML config (default: the packaged configs/settings.yaml or $CVAE_BEAM_CONFIG)")
    ap.add_argument("--full-scale", action="store_true", help="use the packaged configs/full.yaml")
    ap.add_argument("--output", help=f"output root (overrides ${OUTPUT_ENV} and output_dir)")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--workers", type=int, help="process pool size for per-trial work")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-channels", help="generate and save the channel set")
    p.add_argument("--csv", action="store_true", help="also write channels.csv")

    p = sub.add_parser("gen-feedback", help="PMI/CQI reports and coarse/Type II estimates")
    p.add_argument("--channels", help="saved channel file (default: regenerate)")

    p = sub.add_parser("train-cvae", help="train the offline model or the per-UE online models")
    p.add_argument("--scheme", choices=["offline", "online"], help="default: cvae.variant from the config")

    p = sub.add_parser("beamform", help="run one solver on a held-out slot")
    p.add_argument("--solver", choices=list(harness.SOLVERS), required=True)
    p.add_argument("--model", help="saved CVAE for the stochastic solver's samples")
    p.add_argument("--slot", type=int, help="time slot (default: first held-out slot)")

    p = sub.add_parser("reproduce", help="run one of the full experiments")
    p.add_argument("target", choices=list(REPRODUCE))

    p = sub.add_parser("export-csv", help="convert a saved channel file to CSV")
    p.add_argument("channels")
    p.add_argument("--out")
    return ap


def _configure(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config, full_scale=args.full_scale)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.output:
        os.environ[OUTPUT_ENV] = args.output
    if args.workers is not None:
        changes["evaluation"] = replace(cfg.evaluation, n_workers=args.workers)
    return cfg.with_overrides(**changes) if changes else cfg


def dispatch(args: argparse.Namespace, cfg: ExperimentConfig) -> harness.ExperimentReport:
    if args.command == "gen-channels":
        return harness.run_gen_channels(cfg, csv=args.csv)
    if args.command == "gen-feedback":
        return harness.run_gen_feedback(cfg, args.channels)
    if args.command == "train-cvae":
        return harness.run_train(cfg, args.scheme)
    if args.command == "beamform":
        return harness.run_beamform(cfg, args.solver, args.model, args.slot)
    if args.command == "reproduce":
        return REPRODUCE[args.target](cfg)
    return harness.run_export_csv(cfg, args.channels, args.out)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="[cvae-beam] %(message)s", stream=sys.stderr)
    try:
        cfg = _configure(args)
        report = dispatch(args, cfg)
    except (CvaeBeamError, OSError) as e:
        logger.error("ERROR: %s", e)
        return 2
    except KeyboardInterrupt:
        logger.error("interrupted")
        return 130
    print(json.dumps(report.to_dict(), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
