import filecmp

from abbalab import cli


def _config(tmp_path, body):
    path = tmp_path / "run.ini"
    path.write_text(body)
    return str(path)


SMOKE = """[run]
scenario = S1
diabetes_type = T1D
cohort_size = 2
seed = 101
days = 30
arms = abba,bba
"""


def _run(tmp_path, out_name, extra_args=()):
    cfg = _config(tmp_path, SMOKE)
    out = tmp_path / out_name
    rc = cli.main(["run", "--config", cfg, "--out", str(out), *extra_args])
    return rc, out


# --- run -------------------------------------------------------------------------

def test_smoke_run_emits_comparison_artifacts(tmp_path):
    rc, out = _run(tmp_path, "out_a")
    assert rc == 0
    assert (out / "report_T1D.csv").exists()
    assert (out / "chart_T1D.svg").exists()
    assert (out / "failures.txt").exists()
    assert (out / "config.resolved.txt").exists()
    traces = sorted(p.name for p in (out / "traces").glob("*.txt"))
    assert traces == ["p000_abba.txt", "p000_bba.txt",
                      "p001_abba.txt", "p001_bba.txt"]
    checkpoints = list((out / "checkpoints").glob("*.txt"))
    assert len(checkpoints) == 2          # one bundle file per ABBA patient


def test_identical_runs_are_byte_identical(tmp_path):
    _, out_a = _run(tmp_path, "out_a")
    _, out_b = _run(tmp_path, "out_b")
    for rel in ("report_T1D.csv", "chart_T1D.svg", "failures.txt",
                "traces/p000_abba.txt", "traces/p001_bba.txt",
                "checkpoints/p000_abba_agents.txt"):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel


def test_output_files_carry_config_hash_and_seed(tmp_path):
    _, out = _run(tmp_path, "out_a")
    cfg = cli.load_config(_config(tmp_path, SMOKE))
    cfg.out = str(out)
    wanted_hash = cfg.config_hash()
    for rel in ("report_T1D.csv", "traces/p000_abba.txt", "failures.txt",
                "checkpoints/p001_abba_agents.txt"):
        text = (out / rel).read_text()
        head = "\n".join(text.splitlines()[:12])
        assert wanted_hash in head, rel
        assert "master_seed" in head or "seed" in head, rel


def test_single_arm_run_writes_summaries_only(tmp_path):
    cfg = _config(tmp_path, SMOKE)
    out = tmp_path / "solo"
    rc = cli.main(["run", "--config", cfg, "--out", str(out), "--arm", "bba"])
    assert rc == 0
    assert (out / "report_T1D.csv").exists()
    assert not (out / "chart_T1D.svg").exists()


def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path, SMOKE)
    out_a = tmp_path / "seed_a"
    out_b = tmp_path / "seed_b"
    assert cli.main(["run", "--config", cfg, "--out", str(out_a)]) == 0
    assert cli.main(["run", "--config", cfg, "--out", str(out_b),
                     "--seed", "202"]) == 0
    a = (out_a / "traces" / "p000_bba.txt").read_text()
    b = (out_b / "traces" / "p000_bba.txt").read_text()
    assert a != b


# --- config validation ------------------------------------------------------------

def test_short_trial_is_rejected(tmp_path):
    cfg = _config(tmp_path, SMOKE.replace("days = 30", "days = 14"))
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "x")]) == 2


def test_unknown_config_key_is_rejected(tmp_path):
    cfg = _config(tmp_path, SMOKE + "frobnicate = 3\n")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "x")]) == 2


def test_unknown_scenario_is_rejected(tmp_path):
    cfg = _config(tmp_path, SMOKE.replace("scenario = S1", "scenario = S9"))
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "x")]) == 2


def test_config_hash_ignores_out_and_jobs(tmp_path):
    a = cli.load_config(_config(tmp_path, SMOKE))
    b = cli.load_config(_config(tmp_path, SMOKE))
    a.out, a.jobs = "/tmp/somewhere", 4
    b.out, b.jobs = "/tmp/elsewhere", 1
    assert a.config_hash() == b.config_hash()


# --- replay and report ---------------------------------------------------------------

def test_replay_is_idempotent(tmp_path):
    _, out = _run(tmp_path, "out_a")
    before = (out / "report_T1D.csv").read_bytes()
    svg_before = (out / "chart_T1D.svg").read_bytes()
    assert cli.main(["replay", "--out", str(out)]) == 0
    assert (out / "report_T1D.csv").read_bytes() == before
    assert (out / "chart_T1D.svg").read_bytes() == svg_before


def test_replay_rejects_truncated_trace(tmp_path):
    _, out = _run(tmp_path, "out_a")
    target = out / "traces" / "p000_abba.txt"
    lines = target.read_text().splitlines()
    target.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    assert cli.main(["replay", "--out", str(out)]) == 2


def test_replay_rejects_foreign_schema(tmp_path):
    _, out = _run(tmp_path, "out_a")
    target = out / "traces" / "p000_abba.txt"
    text = target.read_text()
    target.write_text(text.replace("# abbalab-trace v1", "# abbalab-trace v999", 1))
    assert cli.main(["replay", "--out", str(out)]) == 2


def test_report_prints_comparison_table(tmp_path, capsys):
    _, out = _run(tmp_path, "out_a")
    assert cli.main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "tir_pct" in text
    assert "rescue activations" in text
    assert "[last4w]" in text


def test_parallel_run_matches_serial_run(tmp_path):
    _, out_serial = _run(tmp_path, "serial")
    _, out_par = _run(tmp_path, "parallel", extra_args=["--jobs", "2"])
    match, mismatch, errors = filecmp.cmpfiles(
        out_serial / "traces", out_par / "traces",
        [p.name for p in (out_serial / "traces").glob("*.txt")], shallow=False)
    assert not mismatch and not errors
    assert (out_serial / "report_T1D.csv").read_bytes() == \
        (out_par / "report_T1D.csv").read_bytes()
