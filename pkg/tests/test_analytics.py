import numpy as np
import pytest

from abbalab import analytics as ana
from abbalab import patient as pat
from abbalab import protocol as proto


# --- range metrics -------------------------------------------------------------

def test_time_in_ranges_constant_in_range():
    assert ana.time_in_ranges(np.full(1440, 120.0)) == (100.0, 0.0, 0.0, 0.0)


def test_time_in_ranges_even_split():
    series = np.concatenate([np.full(720, 60.0), np.full(720, 200.0)])
    assert ana.time_in_ranges(series) == (0.0, 50.0, 0.0, 50.0)


def test_time_in_ranges_severe_low_is_counted_in_both_bands():
    tir, tbr1, tbr2, tar = ana.time_in_ranges(np.full(100, 45.0))
    assert (tir, tbr1, tbr2, tar) == (0.0, 100.0, 100.0, 0.0)


def test_ranges_partition_identity_on_random_series():
    rng = np.random.default_rng(41)
    for _ in range(200):
        series = rng.uniform(20.0, 400.0, rng.integers(10, 3000))
        tir, tbr1, tbr2, tar = ana.time_in_ranges(series)
        assert tir + tbr1 + tar == pytest.approx(100.0, abs=1e-9)
        assert tbr2 <= tbr1


# --- event counting ---------------------------------------------------------------

def test_short_dip_is_not_an_event():
    series = np.full(200, 100.0)
    series[50:60] = 65.0                      # 10 minutes below
    assert ana.count_events(series) == (0, 0)


def test_two_separated_dips_are_two_events():
    series = np.full(200, 100.0)
    series[10:40] = 65.0                      # 30-minute dip
    series[70:100] = 65.0                     # 30-minute recovery, then again
    assert ana.count_events(series)[0] == 2


def test_all_in_range_day_has_no_events():
    assert ana.count_events(np.full(1440, 110.0)) == (0, 0)


def test_brief_recovery_does_not_split_an_event():
    series = np.full(200, 100.0)
    series[10:40] = 65.0
    series[45:75] = 65.0                      # only 5 in-range minutes between
    assert ana.count_events(series)[0] == 1


def test_hyper_events_counted_symmetrically():
    series = np.full(200, 100.0)
    series[20:50] = 220.0
    assert ana.count_events(series) == (0, 1)


def test_no_tbr_implies_no_hypo_events():
    rng = np.random.default_rng(42)
    for _ in range(100):
        series = rng.uniform(70.0, 400.0, 1440)
        _, tbr1, _, _ = ana.time_in_ranges(series)
        if tbr1 == 0.0:
            assert ana.count_events(series)[0] == 0


# --- risk indices -----------------------------------------------------------------

def test_lbgi_zero_point():
    assert ana.lbgi(np.full(100, 112.5)) == pytest.approx(0.0, abs=1e-3)


def test_lbgi_ignores_the_high_side():
    assert ana.lbgi(np.full(100, 250.0)) == 0.0


def test_lbgi_flags_sustained_lows():
    assert ana.lbgi(np.full(100, 50.0)) > 5.0


def test_hba1c_at_mean_148():
    estimate = ana.estimate_hba1c(np.full(1440, 148.0))
    assert estimate == pytest.approx((148.0 + 46.7) / 28.7, abs=1e-9)
    assert round(estimate, 2) == 6.78


def test_hba1c_at_mean_154():
    estimate = ana.estimate_hba1c(np.full(1440, 154.0))
    assert round(estimate, 2) == 6.99


def test_hba1c_is_affine_not_proportional():
    base = ana.estimate_hba1c(np.full(100, 150.0))
    doubled = ana.estimate_hba1c(np.full(100, 300.0))
    assert doubled != pytest.approx(2.0 * base, rel=1e-6)
    assert doubled == pytest.approx(base + 150.0 / 28.7, abs=1e-9)


# --- normality test ----------------------------------------------------------------

def test_lilliefors_accepts_normal_samples():
    rng = np.random.default_rng(43)
    accepted = sum(ana.lilliefors(rng.standard_normal(1000))[1] > 0.05
                   for _ in range(100))
    assert accepted >= 90


def test_lilliefors_rejects_exponential():
    rng = np.random.default_rng(44)
    _, p = ana.lilliefors(rng.exponential(size=1000))
    assert p < 0.01


def test_lilliefors_rejects_constant_by_convention():
    _, p = ana.lilliefors(np.full(50, 3.0))
    assert p == 0.0


def test_lilliefors_needs_five_observations():
    with pytest.raises(ValueError):
        ana.lilliefors(np.array([1.0, 2.0, 3.0]))


# --- paired comparison ----------------------------------------------------------------

def test_identical_arms_are_not_significant():
    a = np.arange(20.0)
    row = ana.paired_compare(a, a)
    assert row.p_value == 1.0
    assert not row.significant


def test_unanimous_differences_are_significant():
    rng = np.random.default_rng(45)
    b = rng.uniform(60.0, 80.0, 20)
    a = b + 5.0
    row = ana.paired_compare(a, b, alpha=0.01)
    assert row.p_value < 0.01
    assert row.significant


def test_wilcoxon_exact_unanimous_tail():
    w, p, method = ana.wilcoxon_signed_rank(np.full(20, 5.0) +
                                            np.arange(20) * 1e-6)
    assert method == "exact"
    assert p == pytest.approx(2.0 / 2 ** 20, rel=1e-9)


def test_wilcoxon_statistic_invariant_under_monotone_transform():
    rng = np.random.default_rng(46)
    d = rng.normal(0.3, 1.0, 18)
    w1, p1, _ = ana.wilcoxon_signed_rank(d)
    w2, p2, _ = ana.wilcoxon_signed_rank(np.sign(d) * np.abs(d) ** 3)
    assert w1 == w2
    assert p1 == p2


def test_paired_power_at_unit_effect():
    rng = np.random.default_rng(47)
    hits = 0
    for _ in range(40):
        b = rng.normal(0.0, 1.0, 101)
        a = b + rng.normal(1.0, 1.0, 101)
        if ana.paired_compare(a, b, alpha=0.01).significant:
            hits += 1
    assert hits >= 38                               # >= 95% power


def test_comparison_gate_runs_exactly_one_test():
    rng = np.random.default_rng(48)
    normal_pair = (rng.normal(100, 10, 30), rng.normal(90, 10, 30))
    skewed_pair = (rng.exponential(5.0, 30) ** 2, rng.exponential(4.0, 30))
    assert ana.paired_compare(*normal_pair).test == "t"
    assert ana.paired_compare(*skewed_pair).test == "wilcoxon"


def test_paired_compare_rejects_length_mismatch():
    with pytest.raises(ValueError):
        ana.paired_compare(np.zeros(5), np.zeros(6))


# --- windows and cohort reduction -----------------------------------------------

def test_sliding_windows_cover_weeks_3_through_10():
    windows = ana.standard_windows(90, 14)
    weekly = [w for w in windows if w.name.startswith("week")]
    assert [w.name for w in weekly] == [f"week{k}" for k in range(3, 11)]
    assert weekly[0].start_day == 15
    assert weekly[-1].end_day == 90


def test_windows_reject_trials_shorter_than_collection():
    with pytest.raises(ValueError):
        ana.standard_windows(10, 14)


def test_full_window_tir_lies_between_sliding_extremes():
    p = pat.generate_cohort(1, "T1D", 51)[0]
    res = proto.run_trial(p, proto.BBA, proto.SCENARIOS["S1"], master_seed=51,
                          days=90)
    windows = ana.standard_windows(90, 14)
    outcome = ana.reduce_trial(res, windows)
    weekly_tir = [s.tir_pct for name, s in outcome.summaries.items()
                  if name.startswith("week")]
    full = outcome.summaries["full"].tir_pct
    assert min(weekly_tir) - 1e-9 <= full <= max(weekly_tir) + 1e-9


def test_single_patient_cohort_has_zero_sd():
    p = pat.generate_cohort(1, "T1D", 52)[0]
    res = proto.run_trial(p, proto.BBA, proto.SCENARIOS["S1"], master_seed=52,
                          days=20)
    summary = ana.summarize_cohort([res])
    vals = summary.metric("full", "tir_pct")
    assert vals.size == 1
    assert np.std(vals) == 0.0


def test_summarize_cohort_rejects_mixed_arms():
    p1, p2 = pat.generate_cohort(2, "T1D", 53)
    spec = proto.SCENARIOS["S1"]
    res_a = proto.run_trial(p1, proto.ABBA, spec, master_seed=53, days=20)
    res_b = proto.run_trial(p2, proto.BBA, spec, master_seed=53, days=20)
    with pytest.raises(ValueError):
        ana.summarize_cohort([res_a, res_b])


def test_build_report_requires_identical_cohorts():
    p1, p2 = pat.generate_cohort(2, "T1D", 54)
    spec = proto.SCENARIOS["S1"]
    sa = ana.summarize_cohort([proto.run_trial(p1, proto.ABBA, spec, 54, days=20)])
    sb = ana.summarize_cohort([proto.run_trial(p2, proto.BBA, spec, 54, days=20)])
    with pytest.raises(ValueError):
        ana.build_report(sa, sb)


def test_report_round_trip_through_csv_and_svg():
    cohort = pat.generate_cohort(2, "T1D", 55)
    spec = proto.SCENARIOS["S1"]
    windows = ana.standard_windows(30, 14)
    arms = {}
    for arm in (proto.ABBA, proto.BBA):
        results = [proto.run_trial(p, arm, spec, master_seed=55, days=30)
                   for p in cohort]
        arms[arm] = ana.summarize_cohort(results, windows)
    report = ana.build_report(arms[proto.ABBA], arms[proto.BBA])
    csv_text = ana.report_to_csv(report, {"master_seed": "55"})
    assert csv_text.startswith(f"# {ana.REPORT_SCHEMA}")
    assert "tir_pct" in csv_text
    svg = ana.chart_svg(report)
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert "</svg>" in svg
