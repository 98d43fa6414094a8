import csv
import math

import numpy as np
import pytest

from margte import dgp, oracle
from margte.mc import (StudyConfig, run_study, summarize, write_replicate_dump,
                       write_study_report)

ORACLE_PS = {"propensity": "oracle"}


def two_type_plan():
    return {"omd": {}, "ipw": ORACLE_PS, "psm_post": ORACLE_PS, "psm_pre": ORACLE_PS,
            "marginality": {}}


def test_constant_effect_study():
    spec = dgp.two_type_spec(y1=(11.5, 21.5))  # tau = 1.5 for both types
    res = run_study(StudyConfig(spec, two_type_plan(), replications=20, n=5000, seed=2))
    for row in res.rows:
        assert row.target_value == pytest.approx(1.5, abs=1e-12)
        # OMD still carries the composition gap when only the effect is constant
        if row.estimator != "omd":
            assert abs(row.bias) <= 4 * row.mcse + 1e-12
    assert res.row("omd").target == "tau_q1"


def test_omd_bias_matches_oracle_bias_terms(two_type):
    res = run_study(StudyConfig(two_type, {"omd": {}}, replications=100, n=20_000, seed=5))
    dec = oracle.omd_decomposition(two_type, "post")
    row = res.row("omd")
    assert row.target_value == pytest.approx(34 / 13, abs=1e-12)
    assert abs(row.bias - (dec.selection_bias + dec.reweight_bias)) <= 3 * row.mcse


def test_study_is_deterministic(two_type):
    cfg = StudyConfig(two_type, two_type_plan(), replications=5, n=1000, seed=9)
    a, b = run_study(cfg), run_study(cfg)
    assert a.rows == b.rows
    threaded = run_study(StudyConfig(two_type, two_type_plan(), 5, 1000, 9, threads=3))
    assert threaded.rows == a.rows


def test_doubling_replications_keeps_prefix(two_type):
    small = run_study(StudyConfig(two_type, two_type_plan(), replications=4, n=1000, seed=1))
    big = run_study(StudyConfig(two_type, two_type_plan(), replications=8, n=1000, seed=1))
    for name, values in small.estimates.items():
        assert np.array_equal(values, big.estimates[name][:4], equal_nan=True)


def test_rmse_identity_and_failures():
    row = summarize("x", "pate", 1.0, np.array([1.0, 2.0, math.nan, 4.0]))
    assert row.failures == 1 and row.successes == 3
    assert row.rmse ** 2 == pytest.approx(row.bias ** 2 + row.sd ** 2, abs=1e-9)
    empty = summarize("x", "pate", 1.0, np.array([math.nan, math.nan]))
    assert empty.failures == 2 and math.isnan(empty.mean)


def test_estimator_failing_everywhere_is_reported():
    spec = dgp.DGPSpec(dgp.Exponential(1), dgp.RatioShift(0), dgp.RatioShift(0),
                       dgp.OutcomeFunction(1), dgp.OutcomeFunction(2))
    res = run_study(StudyConfig(spec, {"marginality": {}}, replications=3, n=20_000))
    row = res.row("marginality")
    assert row.failures == 3 and math.isnan(row.target_value)


def test_config_validation(two_type):
    with pytest.raises(ValueError):
        StudyConfig(two_type, {}, replications=1)
    with pytest.raises(ValueError):
        StudyConfig(two_type, {}, n=99)


def test_report_files(tmp_path, two_type):
    empty = run_study(StudyConfig(two_type, {}, replications=2, n=100))
    path = tmp_path / "empty.csv"
    write_study_report(empty, path)
    assert path.read_text() == "estimator,target,target_value,mean,bias,sd,rmse,failures\n"

    one = run_study(StudyConfig(two_type, {"omd": {}}, replications=2, n=1000))
    write_study_report(one, path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 1 and rows[0]["estimator"] == "omd"

    dump = tmp_path / "dump.csv"
    write_replicate_dump(one, dump)
    lines = dump.read_text().splitlines()
    assert lines[0] == "replicate,estimator,estimate" and len(lines) == 3


def test_report_io_error_names_path(tmp_path, two_type):
    res = run_study(StudyConfig(two_type, {"omd": {}}, replications=2, n=100))
    bad = tmp_path / "missing" / "out.csv"
    with pytest.raises(OSError, match="missing"):
        write_study_report(res, bad)


@pytest.mark.slow
def test_omd_bias_converges_and_consistent_biases_shrink(two_type):
    dec = oracle.omd_decomposition(two_type, "post")
    by_n = {}
    for n in (10_000, 50_000, 200_000):
        reps = 200 if n < 200_000 else 60
        by_n[n] = run_study(StudyConfig(two_type, two_type_plan(), reps, n, seed=17))
    big = by_n[200_000]
    omd = big.row("omd")
    assert abs(omd.bias - (dec.selection_bias + dec.reweight_bias)) <= 3 * omd.mcse
    for name in ("ipw", "psm_post", "psm_pre", "marginality"):
        lo, hi = by_n[10_000].row(name), big.row(name)
        assert abs(hi.bias) < abs(lo.bias) + 3 * math.hypot(lo.mcse, hi.mcse), name
