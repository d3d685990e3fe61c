import shutil

import numpy as np
import pytest
import yaml

from msmcohort import io
from msmcohort.cli import derive_seed, main
from msmcohort.events import prepare_long
from msmcohort.prediction import OccupationCurve

ILLNESS_DEATH = {"states": ["Healthy", "Ill", "Dead"],
                 "transitions": [["Healthy", "Ill"], ["Healthy", "Dead"], ["Ill", "Dead"]],
                 "horizon": 30}

REPLICA = {
    "space": {"preset": "covid", "horizon": 90},
    "generator": {"replica": True, "scale": 0.3},
    "data": {"input": "simulate/wide.csv", "format": "wide", "covariates": ["sex", "age", "safi"],
             "center": ["age", "safi"]},
    "models": {"default": {"covariates": ["sex", "age", "safi"]},
               "transitions": {"SP->NIMV": {"covariates": ["sex", "age", "safi"], "entry_term": "identity"}}},
    "markov_test": {"transitions": ["SP->NIMV"], "B": 1000},
    "prediction": {"M": 2000, "profiles": [
        {"name": "lowrisk", "covariates": {"sex": 0, "age": 50, "safi": 450}, "state": "SP", "cohorts": [1]},
        {"name": "highrisk", "covariates": {"sex": 1, "age": 75, "safi": 150}, "state": "SP",
         "cohorts": [1], "entry_times": [0, 5]}]},
    "seed": 7,
}


def write_config(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("replica")
    cfg = write_config(root / "run.yaml", {**REPLICA, "out": str(root)})
    for cmd in ("simulate", "prep", "fit", "markov-test", "predict"):
        assert main([cmd, "--config", cfg, "--threads", "2"]) == 0, cmd
    return root, cfg


def test_wide_prep_row_count(tmp_path, illness_death, toy_histories):
    io.write_wide(toy_histories, illness_death, tmp_path / "wide.csv")
    cfg = write_config(tmp_path / "c.yaml", {"space": ILLNESS_DEATH, "out": str(tmp_path / "out"),
                                             "data": {"input": "wide.csv", "covariates": ["x"]}})
    assert main(["prep", "--config", cfg]) == 0
    rec = io.read_table(tmp_path / "out" / "prep" / "records.csv")
    expected = sum(sum(1 for a, _ in illness_death.allowed if a == s) for h in toy_histories for s, _ in h.visits)
    assert len(rec) == expected
    assert rec.equals(prepare_long(toy_histories, illness_death, ["x"])
                      .astype(rec.dtypes.to_dict()).reset_index(drop=True)[rec.columns])


def test_wide_round_trip(tmp_path, illness_death, toy_histories):
    io.write_wide(toy_histories, illness_death, tmp_path / "w.csv")
    back = io.read_wide(tmp_path / "w.csv", illness_death)
    assert [(h.id, h.visits, h.end_time, h.end_state, h.covariates) for h in back] == \
        [(h.id, h.visits, h.end_time, h.end_state, h.covariates) for h in toy_histories]


def test_empty_input(tmp_path, capsys):
    (tmp_path / "wide.csv").write_text("id,cohort,x,entry:Healthy,entry:Ill,end_time,end_state\n")
    cfg = write_config(tmp_path / "c.yaml", {"space": ILLNESS_DEATH, "out": str(tmp_path),
                                             "data": {"input": "wide.csv"}})
    assert main(["prep", "--config", cfg]) == 2
    assert "no subjects" in capsys.readouterr().err


def test_malformed_cell(tmp_path, capsys):
    (tmp_path / "wide.csv").write_text(
        "id,cohort,x,entry:Healthy,entry:Ill,end_time,end_state\n"
        "1,1,0.5,0,,4,Dead\n"
        "2,1,abc,0,2,6,Dead\n")
    cfg = write_config(tmp_path / "c.yaml", {"space": ILLNESS_DEATH, "out": str(tmp_path),
                                             "data": {"input": "wide.csv"}})
    assert main(["prep", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "row 2" in err and "'x'" in err


def test_replica_scale_and_seed_echo(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", {"space": {"preset": "covid"}, "out": str(tmp_path),
                                             "generator": {"replica": True, "scale": 0.1}, "seed": 5})
    assert main(["simulate", "--config", cfg, "--seed", "123"]) == 0
    assert "(207, 61, 60)" in capsys.readouterr().out
    meta = io.read_json(tmp_path / "simulate" / "metadata.json")
    assert meta["cohort_sizes"] == [207, 61, 60]
    assert meta["metadata"]["seed"] == 123 and len(meta["metadata"]["config_sha256"]) == 64


def test_bootstrap_floor(pipeline, capsys):
    _, cfg = pipeline
    assert main(["markov-test", "--config", cfg, "--bootstrap", "100", "--out", str(pipeline[0] / "x")]) == 2


def test_derive_seed_is_stable():
    assert derive_seed(7, "markov", "M1") == derive_seed(7, "markov", "M1")
    assert derive_seed(7, "markov", "M1") != derive_seed(7, "markov", "M2")


def test_pipeline_artifacts(pipeline):
    root, _ = pipeline
    for a in ("M1", "M2"):
        mf = io.load_fit(root / "fit" / a / "fit.json")
        coef = io.read_table(root / "fit" / a / "coefficients.csv")
        got = np.concatenate([mf[t].coef for t in mf.fits])
        assert np.array_equal(coef["coef"].to_numpy(), got)
        assert {"transition", "contrast", "estimate", "lower", "upper"} <= set(
            io.read_table(root / "fit" / a / "forest.csv").columns)
        report = (root / "markov" / a / "report.txt").read_text()
        assert "SP->NIMV" in report and all(f"\n{r} " in report for r in ("UM", "WM", "S"))
        pv = io.read_table(root / "markov" / a / "pvalues.csv")
        assert set(pv["summary"]) == {"UM", "WM", "S"}
    log = (root / "fit" / "M1" / "log.txt").read_text()
    assert "pooled baseline hazard only" in log


def test_prediction_outputs(pipeline):
    root, _ = pipeline
    d = root / "predict" / "M1"
    aj = OccupationCurve.from_frame(io.read_table(d / "lowrisk_cohort1_aalen-johansen.csv"),
                                    "aalen-johansen", "SP")
    assert np.allclose(aj.probs.sum(axis=1), 1, atol=1e-9)
    pts = io.read_table(d / "points.csv")
    assert sorted(pts["time"].unique()) == [10.0, 20.0]
    mc = pts[pts["method"] == "monte-carlo"].set_index(["profile", "time"])
    for t in (10.0, 20.0):
        assert mc.loc[("lowrisk", t), "Discharge"] > mc.loc[("highrisk", t), "Discharge"]
        assert mc.loc[("lowrisk", t), "Death"] < mc.loc[("highrisk", t), "Death"]
    dyn = io.read_table(d / "highrisk_cohort1_dynamic.csv")
    assert sorted(dyn["entry_time"].unique()) == [0.0, 5.0]


def test_rerun_is_identical(pipeline, tmp_path):
    root, cfg = pipeline
    # data paths resolve against the config file, outputs go to the new directory
    for cmd in ("prep", "fit"):
        assert main([cmd, "--config", cfg, "--out", str(tmp_path)]) == 0
    a = (root / "fit" / "M2" / "coefficients.csv").read_bytes()
    b = (tmp_path / "fit" / "M2" / "coefficients.csv").read_bytes()
    assert a == b


def test_missing_profile_covariate(pipeline, tmp_path, capsys):
    root, _ = pipeline
    shutil.copytree(root / "fit", tmp_path / "fit")
    cfg = dict(REPLICA, out=str(tmp_path),
               prediction={"profiles": [{"name": "p", "covariates": {"sex": 0, "age": 50}, "state": "SP"}]})
    path = write_config(tmp_path / "c.yaml", cfg)
    assert main(["predict", "--config", path, "--approach", "m1"]) == 2
    assert "safi" in capsys.readouterr().err
