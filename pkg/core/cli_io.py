# core/cli_io.py
import difflib
import logging
import os
import typing
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd
import yaml
from pydantic import BaseModel, ValidationError

from models.models import MissionReport, Scenario
from .config import Settings, settings as default_settings
from .exceptions import ScenarioError
from .mission import rmse, run_mission
from .raster_vision import GrayFrame, write_pgm

logger = logging.getLogger("cli_io")

KeyPath = Tuple[Any, ...]

# plot-data: file -> (log, source column -> output column); t_seconds and value lead every file
PLOT_SERIES = {
    "confidence": ("confidence", {"t": "t_seconds", "value": "value", "series": "series"}),
    "pixel_error": ("pixel_error", {"t": "t_seconds", "value": "value", "series": "series"}),
    "depth": ("depth", {"t": "t_seconds", "estimate": "value", "truth": "truth", "sigma": "sigma"}),
}

REPORT_KEYS = ("scenario", "seed", "target_class", "outcome", "failure_reason", "height_method",
               "height_estimate", "height_truth", "height_samples", "lambda_px_per_m", "lambda_duration_s",
               "depth_initial", "depth_initial_truth", "depth_refined", "depth_refined_truth",
               "active_confidence", "sim_time")


# --- Scenario files ---

def _node_lines(node: yaml.Node, path: KeyPath = (), lines: Optional[Dict[KeyPath, int]] = None) -> Dict[KeyPath, int]:
    """Maps key paths of a composed YAML document to 1-based line numbers."""
    lines = {} if lines is None else lines
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key_path = path + (key_node.value,)
            lines[key_path] = key_node.start_mark.line + 1
            _node_lines(value_node, key_path, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            lines[path + (i,)] = item.start_mark.line + 1
            _node_lines(item, path + (i,), lines)
    return lines


def _line_for(loc: KeyPath, lines: Dict[KeyPath, int]) -> Optional[int]:
    for n in range(len(loc), 0, -1):
        if loc[:n] in lines:
            return lines[loc[:n]]
    return None


def _model_class(annotation: Any) -> Optional[type]:
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return annotation
    for arg in typing.get_args(annotation):
        found = _model_class(arg)
        if found is not None:
            return found
    return None


def _fields_at(loc: KeyPath) -> List[str]:
    """Valid keys of the section that holds the last element of `loc`."""
    cls: Optional[type] = Scenario
    for part in loc[:-1]:
        if isinstance(part, int) or cls is None:
            continue
        info = cls.model_fields.get(part)
        cls = _model_class(info.annotation) if info is not None else None
    return list(cls.model_fields) if cls is not None else []


def _diagnostics(err: ValidationError, lines: Dict[KeyPath, int]) -> List[Tuple[Optional[int], str, str]]:
    out = []
    for item in err.errors():
        # model validators append no field name; tagged unions may add class names
        loc = tuple(p for p in item["loc"] if not (isinstance(p, str) and p[:1].isupper()))
        key = ".".join(str(p) for p in loc) or "<root>"
        msg = item["msg"]
        if item["type"] == "extra_forbidden" and loc:
            close = difflib.get_close_matches(str(loc[-1]), _fields_at(loc), n=1, cutoff=0.4)
            msg = f"unknown key '{loc[-1]}'" + (f"; did you mean '{close[0]}'?" if close else "")
        out.append((_line_for(loc, lines), key, msg))
    return out


def parse_scenario_text(text: str, path: str = "<scenario>") -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError([(line, "<yaml>", str(getattr(e, "problem", e)))], path) from e
    if not isinstance(data, dict):
        raise ScenarioError([(1, "<root>", "scenario must be a mapping of keys to values")], path)
    lines = _node_lines(root) if root is not None else {}
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(_diagnostics(e, lines), path) from e


def parse_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError([(None, "<file>", f"cannot read scenario: {e.strerror or e}")], path) from e
    scenario = parse_scenario_text(text, path)
    logger.info(f"Loaded scenario '{scenario.name}' from {path} ({len(scenario.objects)} objects)")
    return scenario


def serialize_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.model_dump(mode="json"), sort_keys=False)


def apply_overrides(scenario: Scenario, seed: Optional[int] = None, out: Optional[str] = None,
                    runs: Optional[int] = None) -> Scenario:
    update = {k: v for k, v in (("seed", seed), ("output_dir", out), ("run_count", runs)) if v is not None}
    if not update:
        return scenario
    try:
        return Scenario.model_validate(scenario.model_copy(update=update).model_dump())
    except ValidationError as e:
        raise ScenarioError(_diagnostics(e, {}), "<command line>") from e


# --- Reports and logs ---

def _fmt(value: Any, float_format: str) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return float_format % value
    return str(getattr(value, "value", value))


def log_frame(report: MissionReport, name: str) -> pd.DataFrame:
    return pd.DataFrame(report.logs.get(name, []))


def phase_frame(report: MissionReport) -> pd.DataFrame:
    return pd.DataFrame([p.model_dump() for p in report.phases], columns=["phase", "t_start", "t_end"])


def report_document(report: MissionReport, float_format: Optional[str] = None) -> str:
    """Key-value header followed by one embedded CSV section per log."""
    float_format = float_format or default_settings.float_format
    parts = [f"{key}: {_fmt(getattr(report, key), float_format)}" for key in REPORT_KEYS]
    sections = [("phases", phase_frame(report))] + [(name, log_frame(report, name)) for name in sorted(report.logs)]
    for name, df in sections:
        parts.append("")
        parts.append(f"[{name}]")
        parts.append(df.to_csv(index=False, float_format=float_format, lineterminator="\n").rstrip("\n"))
    return "\n".join(parts) + "\n"


def write_run_outputs(report: MissionReport, out_dir: str, cfg: Optional[Settings] = None) -> List[str]:
    cfg = cfg or default_settings
    os.makedirs(out_dir, exist_ok=True)
    written = []
    tables = {"phases": phase_frame(report), **{name: log_frame(report, name) for name in report.logs}}
    for name, df in tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        df.to_csv(path, index=False, float_format=cfg.float_format, lineterminator="\n")
        written.append(path)
    path = os.path.join(out_dir, "report.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(report_document(report, cfg.float_format))
    written.append(path)
    logger.info(f"Wrote {len(written)} files to {out_dir}")
    return written


def plot_data(report: MissionReport, out_dir: str, cfg: Optional[Settings] = None) -> List[str]:
    """Confidence, pixel-error and depth series with a t_seconds column first."""
    cfg = cfg or default_settings
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for filename, (log_name, columns) in PLOT_SERIES.items():
        df = log_frame(report, log_name).reindex(columns=list(columns)).rename(columns=columns)
        path = os.path.join(out_dir, f"plot_{filename}.csv")
        df.to_csv(path, index=False, float_format=cfg.float_format, lineterminator="\n")
        written.append(path)
    return written


def frame_dumper(out_dir: str, every_n: int = 1) -> Callable[[GrayFrame, int], None]:
    os.makedirs(out_dir, exist_ok=True)

    def sink(frame: GrayFrame, index: int) -> None:
        if index % max(every_n, 1) == 0:
            write_pgm(frame, os.path.join(out_dir, f"frame_{index:05d}.pgm"))

    return sink


# --- Batch runs ---

def _run_one(args: Tuple[Scenario, int]) -> MissionReport:
    scenario, seed = args
    return run_mission(scenario, seed)


def run_batch(scenario: Scenario, runs: Optional[int] = None, workers: Optional[int] = None) -> List[MissionReport]:
    """Runs seeds scenario.seed .. scenario.seed + N - 1; results keep seed order."""
    runs = runs or scenario.run_count
    workers = workers or default_settings.BATCH_WORKERS
    jobs = [(scenario, (scenario.seed + i) % 2 ** 64) for i in range(runs)]
    if workers > 1 and runs > 1:
        logger.info(f"Running {runs} missions on {workers} worker processes")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def batch_summary(reports: Sequence[MissionReport]) -> pd.DataFrame:
    """Per-class N, mean, std and RMSE of the height estimate, plus depth errors."""
    rows = []
    for r in reports:
        rows.append({
            "target_class": r.target_class.value, "seed": r.seed, "outcome": r.outcome,
            "height_estimate": r.height_estimate, "height_truth": r.height_truth,
            "depth_initial_error": _abs_diff(r.depth_initial, r.depth_initial_truth),
            "depth_refined_error": _abs_diff(r.depth_refined, r.depth_refined_truth),
        })
    df = pd.DataFrame(rows)
    summary = []
    if df.empty:
        return pd.DataFrame(summary)
    for cls, group in df.groupby("target_class", sort=True):
        done = group[group["height_estimate"].notna()]
        row = {"target_class": cls, "runs": len(group), "failed": int((group["outcome"] != "Done").sum()),
               "N": len(done)}
        if len(done):
            row.update(
                height_mean=float(done["height_estimate"].mean()),
                height_std=float(done["height_estimate"].std(ddof=1)) if len(done) > 1 else 0.0,
                height_rmse=rmse(done["height_truth"].tolist(), done["height_estimate"].tolist()),
                height_truth=float(done["height_truth"].iloc[0]),
                depth_initial_error_mean=float(group["depth_initial_error"].mean()),
                depth_refined_error_mean=float(group["depth_refined_error"].mean()),
            )
        summary.append(row)
    return pd.DataFrame(summary)


def _abs_diff(a: Optional[float], b: Optional[float]) -> Optional[float]:
    return None if a is None or b is None else abs(a - b)


def summary_text(summary: pd.DataFrame, cfg: Optional[Settings] = None) -> str:
    cfg = cfg or default_settings
    lines = ["HEIGHT ESTIMATION RESULTS"]
    for _, row in summary.iterrows():
        if row.get("N", 0) and pd.notna(row.get("height_mean")):
            lines.append(f"{row['target_class']}: N={row['N']} mean={cfg.float_format % row['height_mean']} "
                         f"std={cfg.float_format % row['height_std']} RMSE={cfg.float_format % row['height_rmse']} "
                         f"truth={cfg.float_format % row['height_truth']} failed={row['failed']}")
        else:
            lines.append(f"{row['target_class']}: no successful runs ({row['failed']} failed)")
    return "\n".join(lines) + "\n"
