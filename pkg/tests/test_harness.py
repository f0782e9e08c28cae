import json

import numpy as np
import pytest

from pxlab import harness
from pxlab.harness import CaseSpec, build_case, generate_suite, max_drift, run_case, run_suite


def small_spec(**kw):
    d = dict(name="t", domain={"kind": "rect"},
             exponent={"kind": "constant", "value": 2.2},
             weight={"kind": "power", "alpha": 0.5, "center": [0.5, 0.5]},
             measure={"atoms": [[0.4, 0.6, 1.0]]},
             q={"kind": "constant", "value": 2.5}, h=1 / 16, seed=0)
    d.update(kw)
    return CaseSpec(**d)


def test_suite_is_deterministic_and_roundtrips():
    a = generate_suite("corollaries", 5, seed=7, h=1 / 16)
    b = generate_suite("corollaries", 5, seed=7, h=1 / 16)
    assert [s.to_json() for s in a] == [s.to_json() for s in b]
    c = generate_suite("corollaries", 5, seed=8, h=1 / 16)
    assert a[0].to_json() != c[0].to_json()
    back = CaseSpec.from_dict(json.loads(a[0].to_json()))
    assert back.to_json() == a[0].to_json()


def test_unknown_profile():
    with pytest.raises(ValueError):
        generate_suite("nope", 1)


def test_corollaries_preset_ranges():
    for s in generate_suite("corollaries", 20, seed=0, h=1 / 16):
        case = build_case(s, validate=False)
        pv = case.model.p.inside_values
        qv = case.q.inside_values
        assert 1.9 <= pv.min() and pv.max() <= 2.5
        assert 1.0 <= qv.min() and qv.max() <= 3.0
        assert -0.5 <= s.weight["alpha"] <= 1.0
    zero = [s for s in generate_suite("corollaries", 20, seed=0) if not s.measure["atoms"]
            and not s.measure.get("density")]
    assert len(zero) == 4


def test_build_measure_bump_mass():
    spec = small_spec(measure={"atoms": [], "density": {"kind": "bump", "center": [0.5, 0.5],
                                                        "width": 0.1, "mass": 1.5}})
    case = build_case(spec, validate=False)
    assert case.mu.total_mass == pytest.approx(1.5)


def test_validation_rejects_low_exponent():
    with pytest.raises(ValueError):
        build_case(small_spec(exponent={"kind": "constant", "value": 1.4}))


def test_run_case_row():
    row = run_case(small_spec())
    assert row["status"] == "ok"
    assert 0 < row["main_ratio"] < np.inf
    assert row["goodlambda_inclusion"] is True
    assert row["sobolev_pair_skip"] == "data is not a function"
    assert "B_A2_alpha1" in row and "B_A16_alpha16" in row


def test_run_suite_records_errors_and_writes(tmp_path):
    bad = small_spec(name="bad", domain={"kind": "hexagon"})
    res = run_suite([small_spec(), bad], out_dir=tmp_path, workers=1)
    status = {r["name"]: r["status"] for r in res.rows}
    assert status == {"t": "ok", "bad": "invalid"}
    assert res.aggregates["n_cases"] == 2 and res.aggregates["n_ok"] == 1
    assert (tmp_path / "suite.csv").exists()
    assert json.loads((tmp_path / "t.json").read_text())["case"]["name"] == "t"
    meta = json.loads((tmp_path / "suite.json").read_text())["meta"]
    assert meta["workers"] == 1


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(harness.WORKERS_ENV, "1")
    res = run_suite([small_spec()])
    assert res.meta["workers"] == 1


def test_max_drift():
    assert max_drift([1.0, 1.5, 1.2]) == pytest.approx(1 / 3)
    assert max_drift([1.0, None, 1.0]) == 0.0
    assert max_drift([1.0]) is None


def test_refinement_study_validates_h_list():
    with pytest.raises(ValueError):
        harness.refinement_study(small_spec(), [1 / 8, 1 / 16])
    with pytest.raises(ValueError):
        harness.refinement_study(small_spec(), [1 / 16, 1 / 8, 1 / 32])


def test_refinement_study_drift_columns():
    out = harness.refinement_study(small_spec(), [1 / 8, 1 / 16, 1 / 32])
    assert len(out["rows"]) == 3
    assert out["drift"]["main_ratio"] < 0.5
