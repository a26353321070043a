import json

import numpy as np
import pytest

from lgcmed import (
    Contrast,
    ModelKind,
    ModelSpec,
    PanelDataset,
    SimOptions,
    ValidationError,
    estimate_effects,
    example_params,
    fit,
    generate,
)
from lgcmed.io import (
    DIAGONAL_FLAG,
    EFFECTS_HEADER,
    InputError,
    bundled_estimates_path,
    dumps,
    emit_report,
    fmt,
    load_config,
    load_estimates,
    parse_long_csv,
    read_effects_csv,
    write_long_csv,
)

from _support import MS_CONTRAST, TABLE2, TABLE3_NDE, TABLE3_NIE


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def _same_data(a, b):
    order = np.argsort(b.ids)
    b = b.take(order)
    a = a.take(np.argsort(a.ids))
    assert a.ids == b.ids
    for name in ("exposure", "mediator", "outcome", "covariates"):
        assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True)


def test_parse_two_subjects(tmp_path):
    rows = ["subject_id,variable,occasion,value"]
    for s, x in (("a", 0), ("b", 1)):
        rows.append(f"{s},x,0,{x}")
        for k in range(3):
            rows += [f"{s},m,{k},{k + 0.5}", f"{s},y,{k},{2 * k}"]
    d = parse_long_csv(_write(tmp_path, "d.csv", "\n".join(rows) + "\n"))
    assert d.n_occasions == 3 and len(d) == 2
    assert d.mediator_mask.all() and d.outcome_mask.all()
    assert list(d.exposure) == [0.0, 1.0]


def test_parse_errors(tmp_path):
    head = "subject_id,variable,occasion,value\n"
    with pytest.raises(InputError, match="line 3"):
        parse_long_csv(_write(tmp_path, "a.csv", head + "a,m,0,1\na,m,0,2\n"))
    with pytest.raises(InputError, match="unknown variable"):
        parse_long_csv(_write(tmp_path, "b.csv", head + "a,z,0,1\n"))
    with pytest.raises(InputError, match="line 2"):
        parse_long_csv(_write(tmp_path, "c.csv", head + "a,m,zero,1\n"))
    with pytest.raises(InputError, match="expected 4 fields"):
        parse_long_csv(_write(tmp_path, "d.csv", head + "a,m,0\n"))
    with pytest.raises(InputError, match="header"):
        parse_long_csv(_write(tmp_path, "e.csv", "id,var,occ,val\n"))
    with pytest.raises(InputError, match="occasion 0"):
        parse_long_csv(_write(tmp_path, "f.csv", head + "a,x,1,1\n"), ModelSpec())
    with pytest.raises(InputError):
        parse_long_csv(tmp_path / "missing.csv")


def test_parse_header_only(tmp_path):
    d = parse_long_csv(_write(tmp_path, "h.csv", "subject_id,variable,occasion,value\n"))
    assert len(d) == 0


def test_parse_missing_cells(tmp_path):
    text = "subject_id,variable,occasion,value\na,x,0,1\na,m,0,1\na,y,2,3\n"
    d = parse_long_csv(_write(tmp_path, "m.csv", text), ModelSpec(time_scores=(0, 1, 2)))
    assert d.mediator_mask.tolist() == [[True, False, False]]
    assert d.outcome_mask.tolist() == [[False, False, True]]


@pytest.mark.parametrize("kind", list(ModelKind))
def test_write_parse_round_trip(tmp_path, kind):
    spec = ModelSpec(kind, False, covariate_dim=2)
    d = generate(spec, example_params(spec), SimOptions(n=40, seed=1, missing_rate=0.2))
    path = tmp_path / "rt.csv"
    write_long_csv(d, path)
    _same_data(d, parse_long_csv(path, spec))
    _same_data(d, parse_long_csv(path))


def test_bundled_estimates_reproduce_table3():
    est = load_estimates(bundled_estimates_path())
    assert est.diagonal_approximation and DIAGONAL_FLAG in est.flags
    out = estimate_effects(est.params, est.vcov, [0, 1, 2, 3], MS_CONTRAST)
    assert [e.point for e in out[::2]] == pytest.approx(list(TABLE3_NDE), abs=1e-12)
    assert [e.point for e in out[1::2]] == pytest.approx(list(TABLE3_NIE), abs=1e-12)


def _estimates_json(tmp_path, name, **extra):
    obj = {"model": {"kind": "BinaryExposure", "interaction": False}, "coefficients": dict(TABLE2)}
    obj.update(extra)
    return _write(tmp_path, name, json.dumps(obj))


def test_load_estimates_vcov_permuted(tmp_path):
    names = list(TABLE2)
    rng = np.random.default_rng(0)
    A = rng.normal(size=(12, 12))
    V = A @ A.T
    perm = rng.permutation(12)
    est = load_estimates(_estimates_json(
        tmp_path, "v.json",
        vcov={"order": [names[i] for i in perm], "matrix": V[np.ix_(perm, perm)].tolist()}))
    assert np.array_equal(est.vcov, V) and not est.diagonal_approximation


def test_load_estimates_errors(tmp_path):
    with pytest.raises(ValidationError, match="phi_99"):
        load_estimates(_estimates_json(tmp_path, "u.json", se={**{k: 0.1 for k in TABLE2}, "phi_99": 1.0}))
    bad = {**TABLE2, "phi_99": 1.0}
    path = _write(tmp_path, "u2.json", json.dumps({"model": {}, "coefficients": bad, "se": {}}))
    with pytest.raises(ValidationError, match="phi_99"):
        load_estimates(path)
    M = np.eye(12)
    M[0, 1] = 0.5
    with pytest.raises(ValidationError, match="symmetric"):
        load_estimates(_estimates_json(tmp_path, "a.json", vcov={"order": list(TABLE2), "matrix": M.tolist()}))
    with pytest.raises(ValidationError):
        load_estimates(_estimates_json(tmp_path, "n.json"))
    with pytest.raises(InputError, match="invalid JSON"):
        load_estimates(_write(tmp_path, "j.json", "{oops"))


def test_fmt_and_dumps():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(float("nan")) == "nan"
    x = 1 / 3
    assert float(json.loads(dumps({"a": [x, 2], "b": None, "c": float("inf")}))["a"][0]) == x
    assert json.loads(dumps({"c": float("inf")}))["c"] is None
    assert "0.33333333333333331" in dumps([x])


def test_fit_report_round_trip(tmp_path):
    spec = ModelSpec(interaction=True, covariate_dim=1)
    data = generate(spec, example_params(spec), SimOptions(n=500, seed=3))
    res = fit(spec, data)
    path = tmp_path / "fit.json"
    emit_report(res, path, seed=1234)
    rep = json.loads(path.read_text())
    assert rep["seed"] == 1234 and rep["converged"] is True and "version" in rep
    est = load_estimates(path)
    contrast = Contrast.binary(1, 0, c=[0.5])
    a = estimate_effects(res.theta_hat, res.structural_vcov, [0, 1.5, 3], contrast)
    b = estimate_effects(est.params, est.vcov, [0, 1.5, 3], contrast)
    for x, y in zip(a, b):
        assert abs(x.point - y.point) <= 1e-12 and abs(x.se - y.se) <= 1e-12


def test_effects_csv(tmp_path):
    est = load_estimates(bundled_estimates_path())
    out = estimate_effects(est.params, est.vcov, [0, 1, 2], MS_CONTRAST, kinds=["NDE", "NIE", "Total"])
    path = tmp_path / "e.csv"
    emit_report(out, path)
    assert path.read_text().splitlines()[0] == ",".join(EFFECTS_HEADER)
    rows = read_effects_csv(path)
    assert len(rows) == 3 * 3
    jpath = tmp_path / "e.json"
    emit_report(out, jpath, seed=77, flags=est.flags)
    rep = json.loads(jpath.read_text())
    assert rep["seed"] == 77 and rep["flags"] == [DIAGONAL_FLAG]


def test_emit_unwritable(tmp_path):
    with pytest.raises(InputError):
        emit_report([], tmp_path / "no" / "such" / "dir.csv")


def test_config(tmp_path):
    cfg = {"model": {"kind": "GrowthExposure", "n_occasions": 5, "covariate_dim": 1},
           "params": {"delta_1": 0.4}, "simulation": {"n": 10, "missing_rate": 0.1,
                                                       "confounder": {"mediator": [1, 0]}},
           "fit": {"max_iterations": 50, "start": "Default"}, "seed": 9}
    c = load_config(_write(tmp_path, "c.json", json.dumps(cfg)))
    assert c.spec.n_occasions == 5 and c.params.delta[1] == 0.4
    opts = c.sim_options()
    assert opts.seed == 9 and opts.confounder.effect_on_mediator == (1, 0)
    assert c.fit_options().max_iterations == 50
    with pytest.raises(ValidationError):
        load_config(_write(tmp_path, "bad.json", json.dumps({"modle": {}})))
    with pytest.raises(ValidationError):
        load_config(_write(tmp_path, "bad2.json", json.dumps({"model": {"kind": "Nope"}})))
