"""Glycaemic outcome metrics and the statistical comparison machinery.

Time-in-range percentages, persistence-gated event counts, the Kovatchev
low-blood-glucose index, an ADAG HbA1c estimator, a Monte-Carlo Lilliefors
normality test, and a paired comparison that gates between the paired t-test
and an exact-capable Wilcoxon signed-rank test. All functions are pure.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sps

MINUTES_PER_DAY = 1440

EVENT_PERSIST_MIN = 15     # minutes beyond threshold to open an event
EVENT_REARM_MIN = 15       # in-range minutes to close it


def time_in_ranges(series) -> tuple[float, float, float, float]:
    """(tir, tbr1, tbr2, tar) percentages; tir + tbr1 + tar == 100 exactly."""
    g = np.asarray(series, dtype=float)
    if g.size == 0:
        raise ValueError("empty glucose series")
    n = g.size
    tbr1 = np.count_nonzero(g < 70.0)
    tbr2 = np.count_nonzero(g < 50.0)
    tar = np.count_nonzero(g > 180.0)
    tir = n - tbr1 - tar
    return (100.0 * tir / n, 100.0 * tbr1 / n, 100.0 * tbr2 / n, 100.0 * tar / n)


def _count_runs(beyond: np.ndarray, persist: int, rearm: int) -> int:
    """Events = runs of >= persist True, separated by >= rearm False."""
    count = 0
    in_event = False
    true_run = 0
    false_run = 0
    for flag in beyond:
        if flag:
            true_run += 1
            false_run = 0
            if not in_event and true_run >= persist:
                in_event = True
                count += 1
        else:
            false_run += 1
            true_run = 0
            if in_event and false_run >= rearm:
                in_event = False
    return count


def count_events(series, hypo_threshold: float = 70.0,
                 hyper_threshold: float = 180.0) -> tuple[int, int]:
    """(hypo_events, hyper_events) on a minute-resolution trace."""
    g = np.asarray(series, dtype=float)
    hypo = _count_runs(g < hypo_threshold, EVENT_PERSIST_MIN, EVENT_REARM_MIN)
    hyper = _count_runs(g > hyper_threshold, EVENT_PERSIST_MIN, EVENT_REARM_MIN)
    return hypo, hyper


def lbgi(series) -> float:
    """Kovatchev low-blood-glucose index: mean of 10*f(G)^2 over f < 0."""
    g = np.asarray(series, dtype=float)
    if np.any(g <= 0):
        raise ValueError("glucose values must be > 0")
    f = 1.509 * (np.log(g) ** 1.084 - 5.381)
    rl = np.where(f < 0.0, 10.0 * f * f, 0.0)
    return float(np.mean(rl))


def estimate_hba1c(series) -> float:
    """ADAG linear estimate from mean glucose, in percent."""
    g = np.asarray(series, dtype=float)
    if g.size == 0:
        raise ValueError("empty glucose series")
    return (float(np.mean(g)) + 46.7) / 28.7


# --- Lilliefors normality test (Monte-Carlo p-values) --------------------------

_LILLIEFORS_MC = 10_000
_LILLIEFORS_SEED = 0x11EF0125


def _ks_stat_normal(x: np.ndarray) -> float:
    """KS distance between the sample and a normal with estimated mean/SD."""
    n = x.size
    mu = x.mean()
    sd = x.std(ddof=1)
    if sd == 0.0:
        return 1.0
    z = np.sort((x - mu) / sd)
    cdf = _sps.norm.cdf(z)
    up = np.arange(1, n + 1) / n - cdf
    down = cdf - np.arange(0, n) / n
    return float(max(up.max(), down.max()))


@functools.lru_cache(maxsize=64)
def _lilliefors_table(n: int, n_mc: int) -> np.ndarray:
    """Null distribution of the statistic for sample size n, seeded."""
    rng = np.random.default_rng(np.random.SeedSequence([_LILLIEFORS_SEED, n, n_mc]))
    draws = rng.standard_normal((n_mc, n))
    mu = draws.mean(axis=1, keepdims=True)
    sd = draws.std(axis=1, ddof=1, keepdims=True)
    z = np.sort((draws - mu) / sd, axis=1)
    cdf = _sps.norm.cdf(z)
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    stat = np.maximum((grid_hi - cdf).max(axis=1), (cdf - grid_lo).max(axis=1))
    return np.sort(stat)


def lilliefors(sample, n_mc: int = _LILLIEFORS_MC) -> tuple[float, float]:
    """(statistic, p) for normality with estimated parameters.

    The p-value is the upper tail of a seeded Monte-Carlo null table, so the
    test is fully reproducible. A constant sample rejects by convention.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 5:
        raise ValueError("need at least 5 observations")
    if np.ptp(x) == 0.0:
        return 1.0, 0.0
    stat = _ks_stat_normal(x)
    table = _lilliefors_table(x.size, n_mc)
    n_ge = table.size - np.searchsorted(table, stat, side="left")
    p = (n_ge + 1.0) / (table.size + 1.0)
    return stat, float(p)


# --- Wilcoxon signed-rank -------------------------------------------------------

_WILCOXON_EXACT_MAX = 25


def _signed_ranks(diff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(ranks of |d|, signs) with zeros dropped and ties averaged."""
    d = diff[diff != 0.0]
    ranks = _sps.rankdata(np.abs(d))
    return ranks, np.sign(d)


def _wilcoxon_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p by DP over all 2^n sign assignments.

    Average ranks are multiples of 1/2, so doubling them makes every
    achievable W+ an integer and the distribution a small integer DP. Ties
    are handled exactly because the DP runs on the observed rank multiset.
    """
    doubled = np.rint(ranks * 2.0).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r > 0 else counts
        counts = counts + shifted
    counts /= counts.sum()
    w2 = int(round(w_plus * 2.0))
    upper = counts[w2:].sum()
    lower = counts[: w2 + 1].sum()
    return float(min(1.0, 2.0 * min(upper, lower)))


def _wilcoxon_normal_p(ranks: np.ndarray, signs: np.ndarray, w_plus: float) -> float:
    """Normal approximation with continuity and tie corrections."""
    n = ranks.size
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0.0:
        return 1.0
    delta = w_plus - mean
    z = (delta - 0.5 * np.sign(delta)) / math.sqrt(var)
    return float(min(1.0, 2.0 * _sps.norm.sf(abs(z))))


def wilcoxon_signed_rank(diff) -> tuple[float, float, str]:
    """(W+, two-sided p, method); exact for n <= 25, else normal approximation."""
    d = np.asarray(diff, dtype=float)
    ranks, signs = _signed_ranks(d)
    n = ranks.size
    if n == 0:
        return 0.0, 1.0, "exact"
    w_plus = float(ranks[signs > 0].sum())
    if n <= _WILCOXON_EXACT_MAX:
        return w_plus, _wilcoxon_exact_p(ranks, w_plus), "exact"
    return w_plus, _wilcoxon_normal_p(ranks, signs, w_plus), "normal"


def paired_t(diff) -> tuple[float, float]:
    """Paired t statistic and two-sided p on the differences."""
    d = np.asarray(diff, dtype=float)
    n = d.size
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 0.0, 1.0
    t = d.mean() / (sd / math.sqrt(n))
    return float(t), float(2.0 * _sps.t.sf(abs(t), n - 1))


@dataclass(frozen=True)
class ComparisonRow:
    metric: str
    window: str
    n: int
    mean_a: float
    sd_a: float
    median_a: float
    iqr_a: tuple[float, float]
    mean_b: float
    sd_b: float
    median_b: float
    iqr_b: tuple[float, float]
    test: str              # "t" or "wilcoxon"
    p_value: float
    significant: bool
    alpha: float


def _describe(x: np.ndarray) -> tuple[float, float, float, tuple[float, float]]:
    return (float(np.mean(x)), float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
            float(np.median(x)),
            (float(np.percentile(x, 25)), float(np.percentile(x, 75))))


def paired_compare(a, b, alpha: float = 0.01, metric: str = "",
                   window: str = "") -> ComparisonRow:
    """Arm-a vs arm-b paired comparison with a normality gate.

    Both arms must look normal under Lilliefors (at 0.05) for the paired
    t-test; otherwise the Wilcoxon signed-rank test runs. All-zero
    differences give p = 1 by convention.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size != y.size:
        raise ValueError("paired samples must have equal length")
    diff = x - y
    mean_a, sd_a, med_a, iqr_a = _describe(x)
    mean_b, sd_b, med_b, iqr_b = _describe(y)
    if np.all(diff == 0.0):
        test, p = "t", 1.0
    else:
        normal_a = x.size >= 5 and np.ptp(x) > 0 and lilliefors(x)[1] > 0.05
        normal_b = y.size >= 5 and np.ptp(y) > 0 and lilliefors(y)[1] > 0.05
        if normal_a and normal_b:
            test = "t"
            _, p = paired_t(diff)
        else:
            test = "wilcoxon"
            _, p, _ = wilcoxon_signed_rank(diff)
    return ComparisonRow(metric=metric, window=window, n=int(x.size),
                         mean_a=mean_a, sd_a=sd_a, median_a=med_a, iqr_a=iqr_a,
                         mean_b=mean_b, sd_b=sd_b, median_b=med_b, iqr_b=iqr_b,
                         test=test, p_value=p, significant=bool(p < alpha),
                         alpha=alpha)


# --- analysis windows and cohort summaries --------------------------------------

WINDOW_WEEKS = 4
WINDOW_STEP_WEEKS = 1


@dataclass(frozen=True)
class Window:
    name: str
    start_day: int    # 1-based, inclusive
    end_day: int      # inclusive


def standard_windows(days: int, collection_days: int = 14) -> list[Window]:
    """full + first/last 4 weeks + 4-week windows stepped weekly post-collection."""
    online_start = collection_days + 1
    if days <= collection_days:
        raise ValueError("trial shorter than the collection phase")
    out = [Window("full", online_start, days)]
    span = WINDOW_WEEKS * 7
    out.append(Window("first4w", online_start, min(online_start + span - 1, days)))
    out.append(Window("last4w", max(online_start, days - span + 1), days))
    start = online_start
    while start <= days - span // 2:      # allow the final, possibly short window
        end = min(start + span - 1, days)
        week = (start - 1) // 7 + 1
        out.append(Window(f"week{week}", start, end))
        if end == days:
            break
        start += WINDOW_STEP_WEEKS * 7
    return out


@dataclass(frozen=True)
class GlycemicSummary:
    tir_pct: float
    tbr1_pct: float
    tbr2_pct: float
    tar_pct: float
    hypo_events: int
    hyper_events: int
    mean_glucose: float
    max_glucose: float
    min_glucose: float
    hba1c_pct: float
    lbgi: float
    tdd_u_per_day: float


METRIC_FIELDS = ("tir_pct", "tbr1_pct", "tbr2_pct", "tar_pct", "hypo_events",
                 "hyper_events", "mean_glucose", "hba1c_pct", "lbgi",
                 "tdd_u_per_day")


def summarize_window(glucose_by_day: list[np.ndarray],
                     insulin_by_day: list[float], window: Window) -> GlycemicSummary:
    """Metrics over the window's days (1-based inclusive day indices)."""
    days = range(window.start_day - 1, window.end_day)
    g = np.concatenate([np.asarray(glucose_by_day[i]) for i in days])
    tdd = float(np.mean([insulin_by_day[i] for i in days]))
    tir, tbr1, tbr2, tar = time_in_ranges(g)
    hypo, hyper = count_events(g)
    return GlycemicSummary(
        tir_pct=tir, tbr1_pct=tbr1, tbr2_pct=tbr2, tar_pct=tar,
        hypo_events=hypo, hyper_events=hyper,
        mean_glucose=float(np.mean(g)), max_glucose=float(np.max(g)),
        min_glucose=float(np.min(g)), hba1c_pct=estimate_hba1c(g),
        lbgi=lbgi(g), tdd_u_per_day=tdd)


@dataclass(frozen=True)
class PatientOutcome:
    """Per-patient reduction of one trial: window summaries + event tallies."""
    patient_id: int
    arm: str
    scenario: str
    diabetes_type: str
    summaries: dict[str, GlycemicSummary]
    rescue_count: int


@dataclass(frozen=True)
class CohortSummary:
    arm: str
    scenario: str
    diabetes_type: str
    windows: list[Window]
    outcomes: list[PatientOutcome]

    def metric(self, window: str, name: str) -> np.ndarray:
        return np.array([getattr(o.summaries[window], name) for o in self.outcomes],
                        dtype=float)


def summarize_cohort(results, windows: list[Window] | None = None) -> CohortSummary:
    """Reduce one arm's TrialResults to per-patient, per-window summaries.

    All results must share scenario and advisor arm; pairing across arms
    happens in build_report.
    """
    results = list(results)
    if not results:
        raise ValueError("no results")
    arms = {r.arm for r in results}
    scenarios = {r.scenario for r in results}
    if len(arms) != 1 or len(scenarios) != 1:
        raise ValueError("results must share scenario and advisor arm")
    if windows is None:
        windows = standard_windows(results[0].days, results[0].collection_days)
    outcomes = [reduce_trial(r, windows) for r in results]
    return CohortSummary(arm=results[0].arm, scenario=results[0].scenario,
                         diabetes_type=results[0].patient.diabetes_type,
                         windows=list(windows), outcomes=outcomes)


def reduce_trial(result, windows: list[Window]) -> PatientOutcome:
    glucose_by_day = [t.glucose for t in result.day_traces]
    insulin_by_day = [t.total_insulin_u for t in result.day_traces]
    summaries = {w.name: summarize_window(glucose_by_day, insulin_by_day, w)
                 for w in windows}
    rescues = sum(len(t.rescues) for t in result.day_traces)
    return PatientOutcome(patient_id=result.patient.id, arm=result.arm,
                          scenario=result.scenario,
                          diabetes_type=result.patient.diabetes_type,
                          summaries=summaries, rescue_count=rescues)


@dataclass(frozen=True)
class TrialReport:
    scenario: str
    diabetes_type: str
    windows: list[Window]
    arm_summaries: dict[str, CohortSummary]
    comparisons: list[ComparisonRow]


def build_report(summary_a: CohortSummary, summary_b: CohortSummary,
                 alpha: float = 0.01) -> TrialReport:
    """Pair two arms (same cohort, same scenario) into a single report."""
    if summary_a.scenario != summary_b.scenario:
        raise ValueError("arms ran different scenarios")
    ids_a = [o.patient_id for o in summary_a.outcomes]
    ids_b = [o.patient_id for o in summary_b.outcomes]
    if ids_a != ids_b:
        raise ValueError("mismatched cohorts; pairing requires identical patients")
    comparisons = []
    for w in summary_a.windows:
        for metric in METRIC_FIELDS:
            comparisons.append(paired_compare(
                summary_a.metric(w.name, metric), summary_b.metric(w.name, metric),
                alpha=alpha, metric=metric, window=w.name))
    return TrialReport(scenario=summary_a.scenario,
                       diabetes_type=summary_a.diabetes_type,
                       windows=list(summary_a.windows),
                       arm_summaries={summary_a.arm: summary_a,
                                      summary_b.arm: summary_b},
                       comparisons=comparisons)


# --- report export ----------------------------------------------------------------

REPORT_SCHEMA = "abbalab-report v1"

_SUMMARY_COLUMNS = ("window", "metric", "arm", "n", "mean", "sd", "median",
                    "iqr_lo", "iqr_hi", "test", "p_value", "significant")


def _csv_quote(value: str) -> str:
    if any(ch in value for ch in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def _csv_row(cells) -> str:
    return ",".join(_csv_quote(str(c)) for c in cells)


def report_to_csv(report: TrialReport, headers: dict[str, str] | None = None) -> str:
    """One row per metric per arm per window, then the paired comparisons.

    Every distributional cell carries both mean/SD and median/IQR so either
    presentation convention can be read off directly. Floats are written with
    repr() for byte-stable full precision.
    """
    lines = [f"# {REPORT_SCHEMA}"]
    for key, value in (headers or {}).items():
        lines.append(f"# {key} {value}")
    lines.append(f"# scenario {report.scenario}")
    lines.append(f"# diabetes_type {report.diabetes_type}")
    lines.append(_csv_row(_SUMMARY_COLUMNS))
    arms = sorted(report.arm_summaries)
    for window in report.windows:
        for metric in METRIC_FIELDS:
            for arm in arms:
                values = report.arm_summaries[arm].metric(window.name, metric)
                mean, sd, median, iqr = _describe(values)
                lines.append(_csv_row((
                    window.name, metric, arm, values.size, repr(mean), repr(sd),
                    repr(median), repr(iqr[0]), repr(iqr[1]), "", "", "")))
    for arm in arms:
        rescues = np.array([o.rescue_count
                            for o in report.arm_summaries[arm].outcomes], dtype=float)
        mean, sd, median, iqr = _describe(rescues)
        lines.append(_csv_row((
            "trial", "rescue_count", arm, rescues.size, repr(mean), repr(sd),
            repr(median), repr(iqr[0]), repr(iqr[1]), "", "", "")))
        lines.append(_csv_row((
            "trial", "rescue_total", arm, rescues.size, repr(float(rescues.sum())),
            "", "", "", "", "", "", "")))
    for row in report.comparisons:
        lines.append(_csv_row((
            row.window, row.metric, "", row.n, "", "", "", "", "",
            row.test, repr(row.p_value), row.significant)))
    return "\n".join(lines) + "\n"


# --- sliding-window chart ---------------------------------------------------------

_CHART_SERIES = (("tir_pct", "#2f7d4f", "TIR"),
                 ("tbr1_pct", "#c0392b", "TBR I"),
                 ("tar_pct", "#d98e04", "TAR"))
_CHART_W, _CHART_H = 720.0, 420.0
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 62.0, 160.0, 34.0, 46.0


def chart_svg(report: TrialReport, headers: dict[str, str] | None = None) -> str:
    """Cohort-mean TIR/TBR I/TAR over the weekly sliding windows, per arm.

    Hand-written SVG: a fixed document with one polyline per metric per arm,
    so identical reports always render to identical bytes.
    """
    weekly = [w for w in report.windows if w.name.startswith("week")]
    if not weekly:
        raise ValueError("report has no sliding windows to plot")
    arms = sorted(report.arm_summaries)
    weeks = [int(w.name[4:]) for w in weekly]
    x_lo, x_hi = min(weeks), max(weeks)
    plot_w = _CHART_W - _MARGIN_L - _MARGIN_R
    plot_h = _CHART_H - _MARGIN_T - _MARGIN_B

    def x_of(week: float) -> float:
        if x_hi == x_lo:
            return _MARGIN_L + plot_w / 2.0
        return _MARGIN_L + plot_w * (week - x_lo) / (x_hi - x_lo)

    def y_of(pct: float) -> float:
        return _MARGIN_T + plot_h * (1.0 - pct / 100.0)

    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    for key, value in (headers or {}).items():
        out.append(f"<!-- {key} {value} -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" '
               f'width="{_CHART_W:.0f}" height="{_CHART_H:.0f}" '
               f'viewBox="0 0 {_CHART_W:.0f} {_CHART_H:.0f}">')
    out.append(f'<rect width="{_CHART_W:.0f}" height="{_CHART_H:.0f}" fill="white"/>')
    title = (f"{report.diabetes_type} {report.scenario}: glycaemic ranges over "
             f"4-week windows (start week)")
    out.append(f'<text x="{_MARGIN_L:.0f}" y="22" font-family="sans-serif" '
               f'font-size="14">{title}</text>')
    axis = f'stroke="#333" stroke-width="1"'
    out.append(f'<line x1="{_MARGIN_L:.2f}" y1="{y_of(0):.2f}" '
               f'x2="{_MARGIN_L + plot_w:.2f}" y2="{y_of(0):.2f}" {axis}/>')
    out.append(f'<line x1="{_MARGIN_L:.2f}" y1="{y_of(0):.2f}" '
               f'x2="{_MARGIN_L:.2f}" y2="{y_of(100):.2f}" {axis}/>')
    for tick in range(0, 101, 20):
        y = y_of(tick)
        out.append(f'<line x1="{_MARGIN_L - 4:.2f}" y1="{y:.2f}" '
                   f'x2="{_MARGIN_L:.2f}" y2="{y:.2f}" {axis}/>')
        out.append(f'<text x="{_MARGIN_L - 8:.2f}" y="{y + 4:.2f}" '
                   f'font-family="sans-serif" font-size="11" '
                   f'text-anchor="end">{tick}</text>')
    for week in weeks:
        x = x_of(week)
        out.append(f'<line x1="{x:.2f}" y1="{y_of(0):.2f}" '
                   f'x2="{x:.2f}" y2="{y_of(0) + 4:.2f}" {axis}/>')
        out.append(f'<text x="{x:.2f}" y="{y_of(0) + 18:.2f}" '
                   f'font-family="sans-serif" font-size="11" '
                   f'text-anchor="middle">{week}</text>')
    out.append(f'<text x="{_MARGIN_L + plot_w / 2:.2f}" y="{_CHART_H - 8:.2f}" '
               f'font-family="sans-serif" font-size="12" '
               f'text-anchor="middle">window start (trial week)</text>')
    out.append(f'<text x="16" y="{_MARGIN_T + plot_h / 2:.2f}" '
               f'font-family="sans-serif" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.2f})">'
               f'% of time</text>')
    legend_y = _MARGIN_T + 6.0
    for arm in arms:
        summary = report.arm_summaries[arm]
        dash = '' if arm == arms[0] else ' stroke-dasharray="6 3"'
        for metric, color, label in _CHART_SERIES:
            points = " ".join(
                f"{x_of(week):.2f},{y_of(float(np.mean(summary.metric(w.name, metric)))):.2f}"
                for week, w in zip(weeks, weekly))
            out.append(f'<polyline fill="none" stroke="{color}" '
                       f'stroke-width="1.8"{dash} points="{points}"/>')
            lx = _MARGIN_L + plot_w + 14.0
            out.append(f'<line x1="{lx:.2f}" y1="{legend_y:.2f}" '
                       f'x2="{lx + 26:.2f}" y2="{legend_y:.2f}" '
                       f'stroke="{color}" stroke-width="1.8"{dash}/>')
            out.append(f'<text x="{lx + 32:.2f}" y="{legend_y + 4:.2f}" '
                       f'font-family="sans-serif" font-size="11">'
                       f'{label} {arm}</text>')
            legend_y += 18.0
        legend_y += 8.0
    out.append("</svg>")
    return "\n".join(out) + "\n"
