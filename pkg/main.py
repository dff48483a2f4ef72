# main.py
import argparse
import logging
import os
import sys
from typing import List, NoReturn, Optional

from core.cli_io import (
    apply_overrides,
    batch_summary,
    frame_dumper,
    parse_scenario,
    plot_data,
    run_batch,
    summary_text,
    write_run_outputs,
)
from core.config import configure_logging, settings
from core.exceptions import ScenarioError
from core.mission import run_mission
from models.models import MissionReport, Scenario

logger = logging.getLogger("main_app")

EXIT_DONE = 0
EXIT_CONFIG_ERROR = 1
EXIT_FAILED = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors share the exit status of an invalid scenario."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG_ERROR, f"{self.prog}: error: {message}\n")


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = _ArgumentParser(prog="perception-sim",
                        description="Quadrotor active-perception height and depth estimation runs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "Run a single mission."),
                            ("batch", "Run N seeded missions and summarize height/depth errors."),
                            ("plot-data", "Run a mission and emit confidence, pixel-error and depth series."),
                            ("dump-frames", "Run a mission and write perception frames as PGM.")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--scenario", required=True, help="Scenario YAML file.")
        s.add_argument("--seed", type=int, default=None, help="Override the scenario seed.")
        s.add_argument("--out", default=None, help="Output directory (default: scenario output_dir or OUTPUT_DIR).")
        s.add_argument("--log-level", default=None, help="Override LOG_LEVEL.")
        if name == "batch":
            s.add_argument("--runs", type=int, default=None, help="Number of runs (default: scenario run_count).")
        if name in ("run", "plot-data"):
            s.add_argument("--dump-frames", action="store_true", help="Also write perception frames as PGM.")
    return p.parse_args(argv)


def _out_dir(scenario: Scenario) -> str:
    return scenario.output_dir or os.path.join(settings.OUTPUT_DIR, scenario.name)


def _run_single(scenario: Scenario, out_dir: str, dump: bool) -> MissionReport:
    sink = frame_dumper(os.path.join(out_dir, "frames"), settings.DUMP_EVERY_N_FRAMES) if dump else None
    report = run_mission(scenario, frame_sink=sink)
    logger.info(f"Mission {report.outcome}: height {report.height_estimate} (truth {report.height_truth}), "
                f"depth {report.depth_refined} (truth {report.depth_refined_truth})")
    return report


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    configure_logging(args.log_level)
    try:
        scenario = parse_scenario(args.scenario)
        scenario = apply_overrides(scenario, seed=args.seed, out=args.out, runs=getattr(args, "runs", None))
    except ScenarioError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    out_dir = _out_dir(scenario)

    if args.command == "batch":
        reports = run_batch(scenario)
        for r in reports:
            write_run_outputs(r, os.path.join(out_dir, f"seed_{r.seed}"))
        summary = batch_summary(reports)
        os.makedirs(out_dir, exist_ok=True)
        summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False, float_format=settings.float_format,
                       lineterminator="\n")
        text = summary_text(summary)
        with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        print(text, end="")
        return EXIT_DONE if all(r.succeeded for r in reports) else EXIT_FAILED

    dump = args.command == "dump-frames" or args.dump_frames
    report = _run_single(scenario, out_dir, dump)
    write_run_outputs(report, out_dir)
    if args.command == "plot-data":
        plot_data(report, out_dir)
    if not report.succeeded:
        logger.error(f"Mission failed: {report.failure_reason}")
        return EXIT_FAILED
    return EXIT_DONE


if __name__ == "__main__":
    sys.exit(main())
