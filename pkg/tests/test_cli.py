import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from scipy import integrate, signal

from skewmix.cli import EXIT_DATA, EXIT_USAGE, main, parse_column, DataError

FAST = ["--iters", "300", "--burnin", "100", "--hmax", "15"]


def write_column(path, values, header="y"):
    lines = ([header] if header else []) + [str(v) for v in values]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def bundle_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture
def density_input(tmp_path):
    rng = np.random.default_rng(0)
    y = np.concatenate([rng.normal(-2, 0.6, 40), rng.normal(3, 1.0, 40)])
    return write_column(tmp_path / "y.csv", [repr(float(v)) for v in y])


# parsing -----------------------------------------------------------------------------

def test_parse_column_header_optional():
    assert parse_column("1\n2.5\n", "x").tolist() == [1.0, 2.5]
    assert parse_column("value\n1\n\n2\n", "x").tolist() == [1.0, 2.0]


@pytest.mark.parametrize("text, where", [("1\n2\nabc\n", ":3:"), ("y\n1\nnan\n", ":3:"), ("1,2\n", ":1:")])
def test_parse_column_reports_line(text, where):
    with pytest.raises(DataError, match=where):
        parse_column(text, "f.csv")


@pytest.mark.parametrize("text, msg", [("3\n-1\n", "nonnegative"), ("3\n1.5\n", "integer")])
def test_parse_counts(text, msg):
    with pytest.raises(DataError, match=msg):
        parse_column(text, "f.csv", integers=True)


# fit-density -------------------------------------------------------------------------

def test_fit_density_bundle(tmp_path, density_input, capsys):
    out = tmp_path / "run"
    assert main(["fit-density", "--input", density_input, "--output", str(out), "--seed", "3"] + FAST) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["draws"] == 200
    names = {p.name for p in out.iterdir()}
    assert names == {"density.csv", "clusters.csv", "trace.csv", "ess.csv", "manifest.json"}
    head, dens = read_csv(out / "density.csv")
    assert head == ["x", "density"] and dens.shape == (2001, 2)
    assert np.all(dens[:, 1] >= 0)
    assert integrate.trapezoid(dens[:, 1], dens[:, 0]) == pytest.approx(1.0, abs=0.02)
    _, clusters = read_csv(out / "clusters.csv")
    assert clusters[:, 1].sum() == pytest.approx(1.0)
    head, trace = read_csv(out / "trace.csv")
    assert head[:3] == ["draw", "alpha", "occupied"] and trace.shape == (200, 8)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = manifest["config"]
    assert cfg["seed"] == 3 and cfg["kernel"] == "skew_normal"
    assert all(isinstance(cfg[k], float) for k in ("xi0", "kappa", "a", "b", "psi0", "a_alpha", "b_alpha"))
    assert manifest["data"]["n"] == 80 and len(manifest["data"]["sha256"]) == 64


def test_fit_density_byte_identical_and_replayable(tmp_path, density_input):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = ["fit-density", "--input", density_input, "--seed", "5"] + FAST
    assert main(args + ["--output", str(a)]) == 0
    assert main(args + ["--output", str(b)]) == 0
    assert bundle_bytes(a) == bundle_bytes(b)
    assert main(["fit-density", "--config", str(a / "manifest.json"), "--output", str(c)]) == 0
    assert bundle_bytes(a) == bundle_bytes(c)
    # rerunning into the same directory replaces the bundle
    assert main(args + ["--output", str(a)]) == 0
    assert bundle_bytes(a) == bundle_bytes(b)


def test_flags_override_config(tmp_path, density_input):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"seed": 1, "iters": 200, "burnin": 50, "hmax": 10, "psi0": 4.0}))
    out = tmp_path / "o"
    assert main(["fit-density", "--input", density_input, "--config", str(cfgfile), "--seed", "9",
                 "--output", str(out)]) == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert (cfg["seed"], cfg["iters"], cfg["psi0"]) == (9, 200, 4.0)


@pytest.mark.parametrize("content", ["", "y\n", "y\n1\n2\nbad\n"])
def test_bad_input_leaves_no_output(tmp_path, content, capsys):
    f = tmp_path / "in.csv"
    f.write_text(content)
    out = tmp_path / "never"
    assert main(["fit-density", "--input", str(f), "--output", str(out)] + FAST) == EXIT_DATA
    assert not out.exists()
    assert "data error" in capsys.readouterr().err


def test_missing_file_is_data_error(tmp_path):
    assert main(["fit-density", "--input", str(tmp_path / "nope.csv"), "--output", str(tmp_path / "o")]) == EXIT_DATA


@pytest.mark.parametrize("extra", [["--burnin", "400"], ["--hmax", "0"], ["--thin", "0"], ["--a", "-1"]])
def test_bad_settings_are_usage_errors(tmp_path, density_input, extra):
    args = ["fit-density", "--input", density_input, "--output", str(tmp_path / "o")] + FAST + extra
    assert main(args) == EXIT_USAGE


def test_refuses_to_overwrite_foreign_directory(tmp_path, density_input):
    out = tmp_path / "mine"
    out.mkdir()
    (out / "notes.txt").write_text("keep")
    assert main(["fit-density", "--input", density_input, "--output", str(out)] + FAST) == EXIT_USAGE
    assert (out / "notes.txt").read_text() == "keep"


def test_unknown_kernel_is_argparse_usage_error(density_input):
    with pytest.raises(SystemExit) as e:
        main(["fit-density", "--input", density_input, "--kernel", "cauchy"])
    assert e.value.code == 2


def test_galaxy_preset_is_multimodal(tmp_path):
    out = tmp_path / "g"
    assert main(["fit-density", "--preset", "galaxy", "--iters", "2500", "--burnin", "500",
                 "--output", str(out)]) == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert (cfg["a_alpha"], cfg["b_alpha"], cfg["preset"]) == (0.5, 50.0, "galaxy")
    _, dens = read_csv(out / "density.csv")
    peaks, _ = signal.find_peaks(dens[:, 1], prominence=0.005)
    assert len(peaks) >= 3


# fit-pmf -----------------------------------------------------------------------------

def test_fit_pmf_three_value_data(tmp_path, capsys):
    rng = np.random.default_rng(1)
    y = rng.choice([2, 3, 4], size=150, p=[0.2, 0.6, 0.2])
    f = write_column(tmp_path / "c.csv", y)
    out = tmp_path / "p"
    assert main(["fit-pmf", "--input", f, "--output", str(out), "--seed", "2"] + FAST) == 0
    stats = json.loads(capsys.readouterr().out)
    _, pmf = read_csv(out / "pmf.csv")
    p = pmf[:, 1]
    assert np.all(p >= 0)
    assert p[2:5].sum() > 0.9
    assert stats["pmf_sum"] + stats["tail_mass_above_j_max"] == pytest.approx(1.0, abs=1e-9)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["data"]["rounding"] == {"scheme": "count"}
    assert manifest["config"]["rounding"] == "count"


def test_fit_pmf_deterministic_and_custom_rounding(tmp_path):
    f = write_column(tmp_path / "c.csv", [0, 1, 1, 2, 3, 3, 3, 5], header=None)
    cuts = tmp_path / "cuts.txt"
    cuts.write_text("-inf\n0.5\n1.5\n2.5\n3.5\n4.5\n5.5\n")
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["fit-pmf", "--input", f, "--rounding", f"custom:{cuts}", "--seed", "4"] + FAST
    assert main(args + ["--output", str(a)]) == 0
    assert main(args + ["--output", str(b)]) == 0
    assert bundle_bytes(a) == bundle_bytes(b)
    rounding = json.loads((a / "manifest.json").read_text())["data"]["rounding"]
    assert rounding["scheme"] == "custom" and rounding["thresholds"][0] == 0.5


@pytest.mark.parametrize("content, where", [("y\n1\n-2\n", ":3:"), ("1\n2.5\n", ":2:")])
def test_fit_pmf_rejects_bad_counts(tmp_path, content, where, capsys):
    f = tmp_path / "c.csv"
    f.write_text(content)
    assert main(["fit-pmf", "--input", str(f), "--output", str(tmp_path / "o")] + FAST) == EXIT_DATA
    assert where in capsys.readouterr().err


def test_fit_pmf_bad_rounding_is_usage_error(tmp_path):
    f = write_column(tmp_path / "c.csv", [1, 2])
    assert main(["fit-pmf", "--input", f, "--rounding", "ceil", "--output", str(tmp_path / "o")]) == EXIT_USAGE


# simulate and eval -------------------------------------------------------------------

SIM = ["--iters", "80", "--burnin", "20", "--hmax", "10"]


def test_simulate_records_table_and_resume(tmp_path, capsys):
    out = tmp_path / "study"
    args = ["simulate", "--scenario", "4", "--n", "50", "--replicates", "2", "--output", str(out)] + SIM
    assert main(args) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split()[-4:] == ["KL", "L2", "E(k|-)", "E(alpha|-)"]
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and {r["kernel"] for r in rows} == {"gaussian", "skew_normal"}
    assert all(r["status"] == "ok" for r in rows)
    before = (out / "results.csv").read_bytes()
    # drop one record; the rerun recomputes only that cell
    lines = before.decode().splitlines()
    (out / "results.csv").write_text("\n".join(lines[:-1]) + "\n")
    assert main(args) == 0
    assert (out / "results.csv").read_bytes() == before
    assert (out / "table.txt").read_text() == table


def test_simulate_data_round_trips_into_fit(tmp_path, capsys):
    out = tmp_path / "study"
    assert main(["simulate", "--scenario", "5", "--n", "30", "--replicates", "1", "--kernel", "gaussian",
                 "--output", str(out)] + SIM) == 0
    data = out / "data" / "s5_n30_r0.csv"
    assert main(["fit-pmf", "--input", str(data), "--output", str(tmp_path / "fit")] + FAST) == 0
    assert main(["fit-density", "--input", str(data), "--output", str(tmp_path / "fit2")] + FAST) == 0


def test_simulate_unknown_scenario(tmp_path):
    assert main(["simulate", "--scenario", "9", "--output", str(tmp_path / "s")]) == EXIT_USAGE


def test_simulate_refuses_mismatched_settings(tmp_path):
    out = tmp_path / "study"
    base = ["simulate", "--scenario", "4", "--n", "20", "--replicates", "1", "--output", str(out)] + SIM
    assert main(base) == 0
    assert main(base + ["--seed", "7"]) == EXIT_USAGE


def test_eval_against_scenario_and_reference(tmp_path, capsys):
    x = np.linspace(-5, 5, 1001)
    dens = np.exp(-0.5 * x**2) / np.sqrt(2 * np.pi)
    f = tmp_path / "d.csv"
    f.write_text("x,density\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(x, dens)))
    assert main(["eval", "--input", str(f), "--reference", str(f)]) == 0
    res = json.loads(capsys.readouterr().out)["result"]
    assert res["kl"] == 0.0 and res["l2"] == 0.0
    pmf = tmp_path / "p.csv"
    pmf.write_text("j,pmf\n2,0.2\n3,0.6\n4,0.2\n")
    assert main(["eval", "--input", str(pmf), "--scenario", "5", "--output", str(tmp_path / "e.json")]) == 0
    res = json.loads((tmp_path / "e.json").read_text())["result"]
    assert res["kl"] == pytest.approx(0.0, abs=1e-15) and res["discrete"] is True


def test_eval_usage_and_data_errors(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("j,pmf\n0,1.0\n")
    assert main(["eval", "--input", str(f)]) == EXIT_USAGE
    assert main(["eval", "--input", str(f), "--scenario", "1"]) == EXIT_DATA
    g = tmp_path / "bad.csv"
    g.write_text("x,density\n0,abc\n")
    assert main(["eval", "--input", str(g), "--reference", str(g)]) == EXIT_DATA


def test_console_entry_points():
    r = subprocess.run([sys.executable, "-m", "skewmix", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("skewmix ")
    r = subprocess.run(["skewmix", "fit-density", "--input", "/nonexistent.csv", "--output", "/tmp/x"],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_DATA
