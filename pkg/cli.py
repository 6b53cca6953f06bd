"""
Command line for the mean-curvature-flow laboratory

Every subcommand takes a JSON scenario file; flags override the file.
"""

import argparse
import sys
from typing import List, Optional

from app.core.config import settings
from app.core.exceptions import ConfigurationError, FlowLabError
from app.models.schemas import ScenarioConfig
from app.utils.logger import attach_run_log, setup_logger
from src.etl.artifacts import load_config
from src.experiments.runner import ContinuityExperiment, ScenarioRunner

logger = setup_logger("app")

STAGES = {
    "simulate": ScenarioRunner.simulate,
    "rescale": ScenarioRunner.rescale,
    "neck": ScenarioRunner.neck,
    "audit-alpha": ScenarioRunner.audit_alpha,
    "place": ScenarioRunner.place,
    "link": ScenarioRunner.link,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcflab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["run", "continuity"]:
        cmd = sub.add_parser(name)
        cmd.add_argument("config", nargs="?", default=settings.CONFIG_PATH,
                         help="JSON scenario file (default: $MCF_CONFIG)")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--resolution", type=int)
        cmd.add_argument("--dump-every", type=int, dest="dump_every")
        if name == "continuity":
            cmd.add_argument("--workers", type=int)
    return parser


def apply_overrides(config: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    data = config.model_dump()
    if args.out:
        data["output_dir"] = args.out
    if args.seed is not None:
        data["seed"] = args.seed
    if args.resolution is not None:
        data["base"]["resolution"] = args.resolution
    if args.dump_every is not None:
        data["flow"]["dump_every"] = args.dump_every
    return ScenarioConfig.model_validate(data)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is None:
        logger.error("No scenario file given and MCF_CONFIG is not set")
        return 2
    try:
        config = apply_overrides(load_config(args.config), args)
    except (ConfigurationError, ValueError) as e:
        logger.error(f"Invalid configuration: {str(e)}")
        return 2
    if settings.LOG_FILE:
        attach_run_log(config.output_dir)

    try:
        if args.command == "continuity":
            ContinuityExperiment(config, workers=args.workers).run()
        else:
            runner = ScenarioRunner(config)
            if args.command == "run":
                runner.run()
            else:
                STAGES[args.command](runner)
                runner.report()
    except FlowLabError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
