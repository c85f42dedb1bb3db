import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcpanel.dataio import (
    REPORT_SCHEMA,
    load_config,
    load_panel_csv,
    load_time_covariates,
    load_unit_covariates,
    load_unit_time_covariates,
    write_panel_csv,
    write_report,
)
from mcpanel.errors import ParseError
from mcpanel.harness import EstimatorSummary, EvalReport
from mcpanel.panel import mask_staggered


def _write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_by_two_with_one_treated_cell(tmp_path):
    p = _write(tmp_path, "unit,time,outcome,treated\na,1,1.0,0\na,2,2.0,1\nb,1,3.0,0\nb,2,4.0,0\n")
    panel = load_panel_csv(p)
    assert panel.y.shape == (2, 2)
    assert panel.mask.n_missing == 1 and panel.mask.missing[0, 1]
    assert panel.units == ["a", "b"] and panel.times == ["1", "2"]


def test_empty_outcome_is_missing(tmp_path):
    p = _write(tmp_path, "unit,time,outcome,treated\na,1,,0\na,2,2.0,0\n")
    panel = load_panel_csv(p)
    assert panel.mask.missing[0, 0] and np.isnan(panel.y[0, 0])


def test_column_order_free(tmp_path):
    p = _write(tmp_path, "treated,outcome,time,unit\n0,5.5,t1,u\n")
    assert load_panel_csv(p).y[0, 0] == 5.5


@pytest.mark.parametrize(
    "body, pattern",
    [
        ("unit,time,outcome\na,1,1\n", "missing column"),
        ("unit,time,outcome,treated\na,1,1,0\na,1,2,0\n", "line 3: duplicate"),
        ("unit,time,outcome,treated\na,1,x,0\n", "line 2: outcome"),
        ("unit,time,outcome,treated\na,1,1,2\n", "line 2: treated"),
        ("unit,time,outcome,treated\na,1,1,0\na,2,1,0\nb,1,1,0\n", "not rectangular"),
        ("unit,time,outcome,treated\na,1,1\n", "line 2: expected 4"),
        ("", "empty file"),
    ],
)
def test_panel_parse_errors(tmp_path, body, pattern):
    with pytest.raises(ParseError, match=pattern):
        load_panel_csv(_write(tmp_path, body))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_panel_round_trip(tmp_path_factory, n, t, seed):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, t)) * 1e3
    mask = mask_staggered(rng.integers(1, t + 1, n), t)
    path = tmp_path_factory.mktemp("rt") / "p.csv"
    write_panel_csv(path, y, mask)
    panel = load_panel_csv(path)
    np.testing.assert_array_equal(panel.mask.observed, mask.observed)
    np.testing.assert_array_equal(panel.y, y)
    assert panel.units[0] == "1" and panel.times[-1] == str(t)


def test_covariate_files(tmp_path):
    ux = _write(tmp_path, "unit,a,b\nu2,3,4\nu1,1,2\n", "x.csv")
    np.testing.assert_array_equal(load_unit_covariates(ux, ["u1", "u2"]), [[1, 2], [3, 4]])
    tz = _write(tmp_path, "time,c\n1,7\n2,8\n", "z.csv")
    np.testing.assert_array_equal(load_time_covariates(tz, ["2", "1"]), [[8], [7]])
    v = _write(tmp_path, "unit,time,d\nu1,1,1\nu1,2,2\nu2,1,3\nu2,2,4\n", "v.csv")
    out = load_unit_time_covariates(v, ["u1", "u2"], ["1", "2"])
    assert out.shape == (2, 2, 1) and out[1, 0, 0] == 3
    with pytest.raises(ParseError, match="unit 'u3'"):
        load_unit_covariates(ux, ["u3"])
    with pytest.raises(ParseError, match="line 3: duplicate"):
        load_time_covariates(_write(tmp_path, "time,c\n1,7\n1,8\n", "d.csv"), ["1"])


def test_config_file(tmp_path):
    p = _write(tmp_path, "# comment\nseed = 3\n\nestimators=did,mc-nnm\n", "c.txt")
    assert load_config(p) == {"seed": "3", "estimators": "did,mc-nnm"}
    with pytest.raises(ParseError, match="line 1"):
        load_config(_write(tmp_path, "nonsense\n", "bad.txt"))


def test_report_schema_and_csv(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    rep = EvalReport([EstimatorSummary("did", [1.0, 2.0], [], [None, None]),
                      EstimatorSummary("sc-adh", [None, None], [], ["x", "x"])], seed=7, config_echo={"reps": 2})
    out, csv_path = tmp_path / "r.json", tmp_path / "r.csv"
    write_report([({"t0_ratio": 0.5}, rep), ({"t0_ratio": 0.7}, rep)], out, csv_path)
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert len(doc["estimators"]) == 4 and doc["estimators"][1]["mean_rmse"] is None
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t0_ratio,estimator,replication,rmse,effective_rank,skipped"
    assert len(lines) == 9 and lines[3] == "0.5,sc-adh,0,,,1"
