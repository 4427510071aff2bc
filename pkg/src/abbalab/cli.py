"""Batch experiment runner.

`abbalab run` simulates a cohort under the configured scenario and arms,
writing per-patient trace files, per-day agent checkpoints, a failures
manifest, and the comparison report (CSV + SVG chart). The report step
re-reads the trace files it just wrote, so `replay` over the same directory
reproduces it byte for byte. A config document plus a master seed fully
determines every artifact; per-patient seed streams are split by patient id,
so growing the cohort never perturbs existing patients.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import multiprocessing
import sys
from pathlib import Path

from . import advisor as adv
from . import analytics as ana
from . import patient as pat
from . import protocol as proto

CONFIG_SECTION = "run"
CONFIG_KEYS = ("scenario", "diabetes_type", "cohort_size", "seed", "days",
               "arms", "out", "jobs", "dawn", "misestimation",
               "rescue_threshold")
# Keys that pick the experiment, as opposed to plumbing; only these feed the
# config hash, so re-running into a new directory or with more workers still
# counts as the same experiment.
HASHED_KEYS = ("scenario", "diabetes_type", "cohort_size", "seed", "days",
               "arms", "dawn", "misestimation", "rescue_threshold")


@dataclasses.dataclass
class RunConfig:
    scenario: str = "S1"
    diabetes_type: str = "T1D"
    cohort_size: int = 2
    seed: int = 1
    days: int = 30
    arms: tuple[str, ...] = (proto.ABBA, proto.BBA)
    out: str = ""
    jobs: int = 1
    dawn: str = "auto"
    misestimation: tuple[float, float] | None = None
    rescue_threshold: float = 30.0

    def validate(self) -> None:
        if self.scenario not in proto.SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; "
                             f"expected one of {sorted(proto.SCENARIOS)}")
        if self.diabetes_type not in (pat.T1D, pat.T2D):
            raise ValueError(f"unknown diabetes_type {self.diabetes_type!r}")
        if self.cohort_size < 1:
            raise ValueError("cohort_size must be at least 1")
        if self.days < 15:
            raise ValueError("days must be at least 15: the on-line phase "
                             "requires the 14-day collection window")
        bad = [a for a in self.arms if a not in (proto.ABBA, proto.BBA)]
        if bad or not self.arms:
            raise ValueError(f"arms must be drawn from abba/bba, got {self.arms}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.dawn not in ("auto", "on", "off"):
            raise ValueError("dawn must be auto, on, or off")
        if self.misestimation is not None:
            lo, hi = self.misestimation
            if not 0.0 < lo <= hi:
                raise ValueError("misestimation interval must be 0 < lo <= hi")
        if self.rescue_threshold <= 0.0:
            raise ValueError("rescue_threshold must be positive")
        if not self.out:
            raise ValueError("no output directory; set out= or pass --out")

    def scenario_spec(self) -> proto.ScenarioSpec:
        spec = proto.SCENARIOS[self.scenario]
        if self.misestimation is not None:
            spec = dataclasses.replace(spec, misestimation=self.misestimation)
        return spec

    def canonical_text(self) -> str:
        parts = []
        for key in HASHED_KEYS:
            value = getattr(self, key)
            if key == "arms":
                value = ",".join(sorted(value))
            elif key == "misestimation":
                value = "scenario" if value is None else f"{value[0]!r},{value[1]!r}"
            parts.append(f"{key} = {value}")
        return "\n".join(parts) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def _parse_arms(raw: str) -> tuple[str, ...]:
    arms = tuple(a.strip() for a in raw.split(",") if a.strip())
    return arms


def _parse_interval(raw: str) -> tuple[float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo, hi', got {raw!r}")
    return (float(parts[0]), float(parts[1]))


def load_config(path: str | None) -> RunConfig:
    """Read the declarative config document; unknown sections/keys reject."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"config file not found: {path}")
    unknown_sections = [s for s in parser.sections() if s != CONFIG_SECTION]
    if unknown_sections:
        raise ValueError(f"unknown config sections: {unknown_sections}")
    if not parser.has_section(CONFIG_SECTION):
        raise ValueError(f"config must have a [{CONFIG_SECTION}] section")
    section = parser[CONFIG_SECTION]
    unknown = [k for k in section if k not in CONFIG_KEYS]
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    if "scenario" in section:
        cfg.scenario = section["scenario"].strip()
    if "diabetes_type" in section:
        cfg.diabetes_type = section["diabetes_type"].strip()
    if "cohort_size" in section:
        cfg.cohort_size = section.getint("cohort_size")
    if "seed" in section:
        cfg.seed = section.getint("seed")
    if "days" in section:
        cfg.days = section.getint("days")
    if "arms" in section:
        cfg.arms = _parse_arms(section["arms"])
    if "out" in section:
        cfg.out = section["out"].strip()
    if "jobs" in section:
        cfg.jobs = section.getint("jobs")
    if "dawn" in section:
        cfg.dawn = section["dawn"].strip()
    if "misestimation" in section:
        cfg.misestimation = _parse_interval(section["misestimation"])
    if "rescue_threshold" in section:
        cfg.rescue_threshold = section.getfloat("rescue_threshold")
    return cfg


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "scenario", None) is not None:
        cfg.scenario = args.scenario
    if getattr(args, "arm", None):
        cfg.arms = tuple(args.arm)
    return cfg


# --- run --------------------------------------------------------------------------


def _trace_path(out: Path, patient_id: int, arm: str) -> Path:
    return out / "traces" / f"p{patient_id:03d}_{arm}.txt"


def _checkpoint_path(out: Path, patient_id: int, arm: str) -> Path:
    return out / "checkpoints" / f"p{patient_id:03d}_{arm}_agents.txt"


def _run_one(task: dict) -> tuple[int, str, str | None]:
    """Simulate one patient+arm and write its artifacts. Returns an error
    string instead of raising so a failed patient never kills the pool."""
    params: pat.PatientParams = task["params"]
    arm: str = task["arm"]
    out = Path(task["out"])
    headers = task["headers"]
    try:
        ckpt_path = _checkpoint_path(out, params.id, arm)

        def save_agents(day: int, bundle) -> None:
            text = adv.bundle_to_text(bundle)
            stamped = (f"# config_hash {headers['config_hash']}\n"
                       f"# master_seed {headers['master_seed']}\n"
                       f"# day {day}\n" + text)
            ckpt_path.write_text(stamped)

        result = proto.run_trial(
            params, arm, task["spec"], master_seed=task["seed"],
            days=task["days"], dawn=task["dawn"],
            rescue_threshold=task["rescue_threshold"],
            checkpoint_cb=save_agents)
        _trace_path(out, params.id, arm).write_text(
            proto.trace_to_text(result, headers))
        return (params.id, arm, None)
    except Exception as exc:                    # noqa: BLE001 - manifest entry
        return (params.id, arm, f"{type(exc).__name__}: {exc}")


def _reduce_from_traces(out: Path) -> tuple[dict[str, list], dict[str, str]]:
    """Parse every trace under out/traces, grouped by arm, headers verified."""
    paths = sorted((out / "traces").glob("p*.txt"))
    if not paths:
        raise ValueError(f"no trace files under {out / 'traces'}")
    by_arm: dict[str, list] = {}
    headers: dict[str, str] | None = None
    for path in paths:
        result, extra = proto.trace_from_text(path.read_text())
        if headers is None:
            headers = extra
        elif extra != headers:
            raise ValueError(f"{path.name} carries different run headers; "
                             "directory mixes runs")
        by_arm.setdefault(result.arm, []).append(result)
    for results in by_arm.values():
        results.sort(key=lambda r: r.patient.id)
    return by_arm, headers or {}


def _write_report(out: Path, by_arm: dict[str, list],
                  headers: dict[str, str]) -> list[Path]:
    """Report CSV (+ chart when both arms are present) from parsed trials."""
    summaries = {arm: ana.summarize_cohort(results)
                 for arm, results in sorted(by_arm.items())}
    written = []
    dtype = next(iter(summaries.values())).diabetes_type
    if proto.ABBA in summaries and proto.BBA in summaries:
        report = ana.build_report(summaries[proto.ABBA], summaries[proto.BBA])
        csv_path = out / f"report_{dtype}.csv"
        csv_path.write_text(ana.report_to_csv(report, headers))
        written.append(csv_path)
        if any(w.name.startswith("week") for w in report.windows):
            svg_path = out / f"chart_{dtype}.svg"
            svg_path.write_text(ana.chart_svg(report, headers))
            written.append(svg_path)
    else:
        (arm, summary), = summaries.items()
        report = ana.TrialReport(scenario=summary.scenario,
                                 diabetes_type=dtype,
                                 windows=summary.windows,
                                 arm_summaries={arm: summary},
                                 comparisons=[])
        csv_path = out / f"report_{dtype}.csv"
        csv_path.write_text(ana.report_to_csv(report, headers))
        written.append(csv_path)
    return written


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        cfg.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    headers = {"config_hash": cfg.config_hash(), "master_seed": str(cfg.seed)}
    (out / "config.resolved.txt").write_text(
        f"# config_hash {headers['config_hash']}\n"
        f"# master_seed {cfg.seed}\n" + cfg.canonical_text() +
        f"out = {cfg.out}\njobs = {cfg.jobs}\n")

    cohort = pat.generate_cohort(cfg.cohort_size, cfg.diabetes_type, cfg.seed)
    spec = cfg.scenario_spec()
    tasks = [{"params": p, "arm": arm, "spec": spec, "seed": cfg.seed,
              "days": cfg.days, "dawn": cfg.dawn,
              "rescue_threshold": cfg.rescue_threshold,
              "out": str(out), "headers": headers}
             for p in cohort for arm in cfg.arms]
    if cfg.jobs > 1:
        with multiprocessing.Pool(cfg.jobs) as pool:
            statuses = pool.map(_run_one, tasks)
    else:
        statuses = [_run_one(t) for t in tasks]

    failures = [(pid, arm, err) for pid, arm, err in statuses if err is not None]
    manifest = [f"# config_hash {headers['config_hash']}",
                f"# master_seed {cfg.seed}",
                f"# failures {len(failures)} of {len(tasks)} trials"]
    manifest += [f"p{pid:03d} {arm} {err}" for pid, arm, err in sorted(failures)]
    (out / "failures.txt").write_text("\n".join(manifest) + "\n")

    completed = [s for s in statuses if s[2] is None]
    if completed:
        by_arm, _ = _reduce_from_traces(out)
        written = _write_report(out, by_arm, headers)
        for path in written:
            print(f"wrote {path}")
    print(f"{len(completed)}/{len(tasks)} trials completed; "
          f"failures manifest: {out / 'failures.txt'}")
    return 0 if not failures else 1


# --- replay / report ---------------------------------------------------------------


def cmd_replay(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        by_arm, headers = _reduce_from_traces(out)
        written = _write_report(out, by_arm, headers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(f"wrote {path}")
    return 0


_TABLE_METRICS = ("tir_pct", "tbr1_pct", "tbr2_pct", "tar_pct", "hypo_events",
                  "hyper_events", "hba1c_pct", "lbgi", "tdd_u_per_day")


def cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        by_arm, _ = _reduce_from_traces(out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summaries = {arm: ana.summarize_cohort(results)
                 for arm, results in sorted(by_arm.items())}
    arms = sorted(summaries)
    report = None
    if len(arms) == 2:
        report = ana.build_report(summaries[proto.ABBA], summaries[proto.BBA])
    first = summaries[arms[0]]
    print(f"scenario {first.scenario}  {first.diabetes_type}  "
          f"n={len(first.outcomes)}")
    for window in ("full", "first4w", "last4w"):
        print(f"\n[{window}]")
        header = f"{'metric':<14}" + "".join(f"{a:>22}" for a in arms)
        print(header + ("        test       p" if report else ""))
        for metric in _TABLE_METRICS:
            cells = ""
            for arm in arms:
                values = summaries[arm].metric(window, metric)
                cells += f"{values.mean():>13.2f} ±{values.std(ddof=1) if len(values) > 1 else 0.0:>6.2f}"
            line = f"{metric:<14}" + cells
            if report:
                row = next(r for r in report.comparisons
                           if r.window == window and r.metric == metric)
                line += f"{row.test:>12}{row.p_value:>8.4f}"
            print(line)
    rescue_note = "  ".join(
        f"{arm}: {sum(o.rescue_count for o in summaries[arm].outcomes)}"
        for arm in arms)
    print(f"\nrescue activations  {rescue_note}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abbalab",
        description="In-silico basal-bolus advisor trials: run, replay, report.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a cohort and write artifacts")
    p_run.add_argument("--config", help="declarative run config (INI)")
    p_run.add_argument("--seed", type=int, help="master seed (overrides config)")
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--jobs", type=int, help="parallel workers")
    p_run.add_argument("--scenario", choices=sorted(proto.SCENARIOS),
                       help="scenario id (overrides config)")
    p_run.add_argument("--arm", action="append", choices=[proto.ABBA, proto.BBA],
                       help="restrict to an arm (repeatable)")
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser(
        "replay", help="recompute the report from existing trace files")
    p_replay.add_argument("--out", required=True, help="run output directory")
    p_replay.set_defaults(func=cmd_replay)

    p_report = sub.add_parser(
        "report", help="print the comparison table from existing trace files")
    p_report.add_argument("--out", required=True, help="run output directory")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
