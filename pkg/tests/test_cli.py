import json
import shutil
import subprocess
import sys

import pytest

from acdcfreq import data_path
from acdcfreq.cli import main
from acdcfreq.results import read_metrics, read_timeseries
from acdcfreq.scenario_io import load_scenario


def smib_dict(**solver):
    d = json.loads(data_path("smib.json").read_text())
    d["solver"].update(solver)
    return d


def write(tmp_path, name, d):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


@pytest.mark.parametrize("sub", [[], ["simulate"], ["tune-epc"], ["ss-freq"], ["validate"]])
def test_help_exits_zero(sub, capsys):
    assert main(sub + ["--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_or_missing_arguments_exit_2(capsys):
    assert main([]) == 2
    assert main(["ss-freq", "--dp", "1"]) == 2
    assert main(["bogus"]) == 2


def test_simulate_smib_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["simulate", "--scenario", str(data_path("smib.json")), "--out", str(out),
               "--t-end", "5", "--dump-admittance"])
    assert rc == 0
    assert "nadir" in capsys.readouterr().out
    for name in ("timeseries.csv", "metrics.json", "effective_scenario.json", "admittance.mtx",
                 "system.f_avg_fcrd_hz.svg"):
        assert (out / name).is_file(), name
    eff = load_scenario(out / "effective_scenario.json")
    assert eff.solver.t_end_s == 5.0
    t, ch = read_timeseries(out / "timeseries.csv")
    assert t[-1] == pytest.approx(5.0)
    assert read_metrics(out / "metrics.json").nadir_hz == pytest.approx(ch["system.f_avg_fcrd_hz"].min())


def test_simulate_channel_filter(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--scenario", str(data_path("smib.json")), "--out", str(out),
                 "--t-end", "2", "--channels", "G1.*", "--no-plots"]) == 0
    _, ch = read_timeseries(out / "timeseries.csv")
    assert ch and all(n.startswith("G1.") for n in ch)
    assert not list(out.glob("*.svg"))
    assert main(["simulate", "--scenario", str(data_path("smib.json")), "--out", str(out),
                 "--t-end", "2", "--channels", "nothing.here"]) == 2


def test_dangling_reference_exits_2(tmp_path, capsys):
    d = smib_dict()
    d["loads"][0]["bus"] = "NOWHERE"
    rc = main(["simulate", "--scenario", write(tmp_path, "bad.json", d), "--out",
               str(tmp_path / "o")])
    assert rc == 2
    assert "NOWHERE" in capsys.readouterr().err


def test_malformed_json_exits_2(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{ not json")
    assert main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    assert main(["validate", str(p)]) == 2


def test_unsolvable_power_flow_exits_3(tmp_path, capsys):
    d = smib_dict()
    d["loads"][0]["p0_mw"] = 20000.0     # beyond the 10 pu transfer limit of x = 0.1
    d["machines"][0]["p0_mw"] = 20000.0
    d["machines"][0]["s_n_mva"] = 30000.0
    d["machines"][0]["governor"]["p_n_mw"] = 25000.0
    rc = main(["simulate", "--scenario", write(tmp_path, "heavy.json", d), "--out",
               str(tmp_path / "o")])
    assert rc == 3
    assert "solver failure" in capsys.readouterr().err


def test_directory_run_in_parallel(tmp_path, capsys):
    src = tmp_path / "scen"
    src.mkdir()
    write(src, "a.json", smib_dict(t_end_s=2.0))
    d = smib_dict(t_end_s=2.0)
    d["events"][0]["magnitude_mw"] = 50.0
    write(src, "b.json", d)
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(src), "--out", str(out), "--jobs", "2",
                 "--no-plots"]) == 0
    na = read_metrics(out / "a" / "metrics.json").nadir_hz
    nb = read_metrics(out / "b" / "metrics.json").nadir_hz
    assert na < nb
    # parallel and serial runs write identical files
    out2 = tmp_path / "out2"
    assert main(["simulate", "--scenario", str(src), "--out", str(out2), "--no-plots"]) == 0
    for k in ("a", "b"):
        assert (out / k / "timeseries.csv").read_bytes() == (out2 / k / "timeseries.csv").read_bytes()


def test_empty_directory_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["simulate", "--scenario", str(tmp_path / "empty"), "--out",
                 str(tmp_path / "o")]) == 2


def test_tune_epc_two_link(tmp_path, capsys):
    out = tmp_path / "tuned.json"
    assert main(["tune-epc", "--problem", str(data_path("two-link-problem.json")),
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "4828.0" in text and "clamped: A" in text
    res = json.loads(out.read_text())
    assert res["droops_pu"]["A"] == pytest.approx(0.04)


def test_tune_epc_zero_disturbance(capsys):
    assert main(["tune-epc", "--problem",
                 str(data_path("zero-disturbance-problem.json"))]) == 0
    assert "over 0 link(s)" in capsys.readouterr().out


def test_tune_epc_infeasible_exits_4(tmp_path, capsys):
    d = json.loads(data_path("two-link-problem.json").read_text())
    for k in d["links"]:
        k["headroom_mw"] = 100.0
    assert main(["tune-epc", "--problem", write(tmp_path, "p.json", d)]) == 4
    err = capsys.readouterr().err
    assert "capacity" in err and "shortfall" in err


def test_tune_epc_invalid_problem_exits_2(tmp_path):
    d = json.loads(data_path("two-link-problem.json").read_text())
    d["surprise"] = True
    assert main(["tune-epc", "--problem", write(tmp_path, "p.json", d)]) == 2
    assert main(["tune-epc", "--problem", str(tmp_path / "missing.json")]) == 2


def test_ss_freq_deviation(capsys):
    assert main(["ss-freq", "--dp", "1040", "--beta-g", "3648"]) == 0
    out = capsys.readouterr().out
    assert "df = -0.3851 Hz" in out and "valid: yes" in out


def test_ss_freq_required_beta_h_and_reference(capsys):
    assert main(["ss-freq", "--dp", "1450", "--beta-g", "2418", "--df-target", "-0.5",
                 "--paper-compare"]) == 0
    out = capsys.readouterr().out
    assert "required beta_h = 4828.00" in out
    assert "replacement ratio = 4.0000" in out
    assert "published reference: beta_h = 3715" in out


def test_ss_freq_input_errors(capsys):
    assert main(["ss-freq", "--dp", "1", "--beta-g", "-1"]) == 2
    assert main(["ss-freq", "--dp", "1", "--beta-g", "0"]) == 2
    assert main(["ss-freq", "--dp", "1", "--beta-g", "10", "--beta-h", "1",
                 "--df-target", "-0.5"]) == 2
    assert main(["ss-freq", "--dp", "1", "--beta-g", "10", "--df-target", "-0.3"]) == 2
    assert main(["ss-freq", "--dp", "1", "--beta-g", "10", "--f-tfl", "49.95"]) == 2


def test_validate_reports(tmp_path, capsys):
    assert main(["validate", str(data_path("smib.json")), str(data_path("nps-lite.json"))]) == 0
    d = smib_dict()
    d["machines"][0]["h_s"] = -1.0
    assert main(["validate", write(tmp_path, "neg.json", d)]) == 2
    captured = capsys.readouterr()
    assert "invalid" in captured.out and "zero-inertia-onshore (G1)" in captured.err


@pytest.mark.skipif(shutil.which("acdcfreq") is None, reason="console script not installed")
def test_console_script_and_module_entry():
    r = subprocess.run(["acdcfreq", "ss-freq", "--dp", "1040", "--beta-g", "3648"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "-0.3851" in r.stdout
    r = subprocess.run([sys.executable, "-m", "acdcfreq", "validate", "/nonexistent.json"],
                       capture_output=True, text=True)
    assert r.returncode == 2
