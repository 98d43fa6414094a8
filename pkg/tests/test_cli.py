import csv
import subprocess
import sys
import time
from pathlib import Path

import pytest

from margte import cli, dgp
from margte.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TWO_TYPE_DGP = CONFIGS.joinpath("two_type.toml").read_text().split("[sample]")[0]


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(*args):
    return cli.main([str(a) for a in args])


def rows(path):
    return list(csv.DictReader(open(path, newline="")))


def two_type_config(tmp_path, extra=""):
    return write(tmp_path, "run.toml", TWO_TYPE_DGP + extra)


# ---------------------------------------------------------------- oracle

def test_oracle_two_type(tmp_path):
    cfg = two_type_config(tmp_path, "[dichotomy]\np_threshold = 0.5\n")
    out = tmp_path / "oracle.csv"
    assert run("oracle", "--config", cfg, "--out", out) == 0
    values = {r["name"]: r["value"] for r in rows(out)}
    assert float(values["tau_dp"]) == pytest.approx(2.4, abs=1e-12)
    assert float(values["theta_bar"]) == 1.5 and float(values["tau_infra"]) == 3.0


def test_oracle_text_output(tmp_path):
    out = tmp_path / "oracle.txt"
    assert run("oracle", "--config", two_type_config(tmp_path), "--out", out) == 0
    assert "N0 = 0.40000000000000002" in out.read_text().splitlines()


def test_oracle_equal_regimes_marks_tau_dp(tmp_path, capsys):
    out = tmp_path / "o.csv"
    assert run("oracle", "--config", CONFIGS / "identical_regimes.toml", "--out", out) == 0
    values = {r["name"]: r["value"] for r in rows(out)}
    assert values["tau_dp"] == "degenerate-weights"
    assert "note:" in capsys.readouterr().out


def test_oracle_missing_dgp_section(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", "[dichotomy]\np_threshold = 0.5\n")
    out = tmp_path / "o.csv"
    assert run("oracle", "--config", cfg, "--out", out) != 0
    assert "[dgp]" in capsys.readouterr().err
    assert not out.exists()


def test_oracle_validation_failure_names_check(tmp_path, capsys):
    text = TWO_TYPE_DGP.replace("values = [0.5, 0.8]", "values = [0.1, 0.8]")
    out = tmp_path / "o.csv"
    assert run("oracle", "--config", write(tmp_path, "bad.toml", text), "--out", out) == 1
    assert "p1 does not dominate p0 at theta=" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_is_named(tmp_path, capsys):
    cfg = two_type_config(tmp_path, "[sample]\nn_pre = 5\nn_post = 5\ncolour = 1\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "d.csv") == 2
    assert "'colour'" in capsys.readouterr().err


# ---------------------------------------------------------------- simulate

def test_simulate_rejects_empty_cohort(tmp_path, capsys):
    cfg = two_type_config(tmp_path, "[sample]\nn_pre = 0\nn_post = 5\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "d.csv") == 2
    assert "n_pre" in capsys.readouterr().err


def test_simulate_prints_shares_and_is_byte_identical(tmp_path, capsys):
    n = 200_000
    cfg = two_type_config(tmp_path, f"[sample]\nn_pre = {n}\nn_post = 1000\nseed = 3\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("simulate", "--config", cfg, "--out", a) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert run("simulate", "--config", cfg, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    share = float(first.split("share ")[1].rstrip(")"))
    assert abs(share - 0.4) <= 3 * (0.24 / n) ** 0.5


# ---------------------------------------------------------------- estimate

ESTIMATE = """
[estimate]
estimators = ["omd", "ipw", "psm_post", "psm_pre", "marginality"]
bootstrap = {boot}
seed = 1

[estimate.ipw]
propensity = "oracle"

[estimate.psm_post]
propensity = "oracle"

[estimate.psm_pre]
propensity = "oracle"
"""


def test_estimate_five_rows(tmp_path):
    cfg = two_type_config(tmp_path, "[sample]\nn_pre = 100000\nn_post = 100000\nseed = 5\n"
                          + ESTIMATE.format(boot=0))
    data, out = tmp_path / "d.csv", tmp_path / "e.csv"
    assert run("simulate", "--config", cfg, "--out", data) == 0
    assert run("estimate", "--config", cfg, "--data", data, "--out", out) == 0
    got = rows(out)
    assert [r["estimand"] for r in got] == ["omd", "pate", "tau_q1", "tau_q0", "tau_dp"]
    assert list(got[0]) == ["estimand", "point", "se", "n_used", "n_dropped", "warnings"]
    assert float(got[4]["point"]) == pytest.approx(2.4, abs=0.02)


def test_estimate_failure_marker(tmp_path):
    data = write(tmp_path, "d.csv", "firm_id,regime,x,d,outcome\n0,0,1,0,\n1,1,1,1,3.5\n")
    cfg = write(tmp_path, "e.toml", '[estimate]\nestimators = ["omd"]\nbootstrap = 0\n')
    out = tmp_path / "e.csv"
    assert run("estimate", "--config", cfg, "--data", data, "--out", out) == 0
    (row,) = rows(out)
    assert row["point"] == "FAILED" and "InsufficientDataError" in row["warnings"]


def test_estimate_unreadable_dataset(tmp_path):
    cfg = write(tmp_path, "e.toml", '[estimate]\nestimators = ["omd"]\n')
    out = tmp_path / "e.csv"
    assert run("estimate", "--config", cfg, "--data", tmp_path / "nope.csv", "--out", out) != 0
    bad = write(tmp_path, "bad.csv", "firm_id,regime,x,d,outcome\n0,0,1,0,2.0\n")
    assert run("estimate", "--config", cfg, "--data", bad, "--out", out) == 1
    assert not out.exists()


# ---------------------------------------------------------------- mc

def test_mc_smoke_is_fast_and_reproducible(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    start = time.perf_counter()
    assert run("mc", "--config", CONFIGS / "smoke_mc.toml", "--out", a) == 0
    assert time.perf_counter() - start < 10
    assert run("mc", "--config", CONFIGS / "smoke_mc.toml", "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(rows(a)) == 5


def test_mc_two_type_omd_bias(tmp_path):
    cfg = two_type_config(tmp_path, '[study]\nestimators = ["omd"]\nreplications = 50\n'
                          'n = 20000\nseed = 4\n')
    out, dump = tmp_path / "mc.csv", tmp_path / "dump.csv"
    assert run("mc", "--config", cfg, "--out", out, "--dump", dump) == 0
    (row,) = rows(out)
    assert row["target"] == "tau_q1"
    assert float(row["bias"]) == pytest.approx(-35 / 26, abs=0.02)
    assert len(dump.read_text().splitlines()) == 51


def test_mc_rejects_tiny_study(tmp_path):
    cfg = two_type_config(tmp_path, "[study]\nreplications = 1\n")
    assert run("mc", "--config", cfg, "--out", tmp_path / "mc.csv") == 2


# ---------------------------------------------------------------- configs

@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_parse_and_validate(path):
    cfg = cli.load_config(path)
    assert dgp.validate_spec(cfg.spec).ok


def test_every_family_has_a_config():
    specs = [cli.load_config(p).spec for p in CONFIGS.glob("*.toml")]
    assert {s.distribution.family for s in specs} == {"lognormal", "exponential", "discrete"}
    assert {s.p0.family for s in specs} | {s.p1.family for s in specs} == \
        {"logistic", "ratio", "piecewise"}
    assert {s.covariate.mode for s in specs} == {"identity", "binned", "noisy"}


def test_parse_config_errors():
    with pytest.raises(ConfigError, match="unknown section"):
        cli.parse_config({"dgp2": {}})
    with pytest.raises(ConfigError, match="unknown estimator"):
        cli.parse_config({"estimate": {"estimators": ["nope"]}})
    with pytest.raises(ConfigError, match="p_threshold"):
        cli.parse_config({"dichotomy": {}})


def test_module_entry_point(tmp_path):
    out = tmp_path / "o.csv"
    proc = subprocess.run([sys.executable, "-m", "margte", "oracle", "--config",
                           str(CONFIGS / "two_type.toml"), "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
