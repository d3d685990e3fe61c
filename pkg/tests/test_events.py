import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msmcohort.events import (
    center_covariates,
    check_min_events,
    impute_recovery_sojourn,
    prepare_long,
    reconstruct_histories,
)
from msmcohort.states import HistoryError, StateSpace, SubjectHistory, covid_state_space


def test_state_space_invariants():
    with pytest.raises(ValueError):
        StateSpace(["A", "B"], [("A", "A")])
    with pytest.raises(ValueError):
        StateSpace(["A", "B"], [("A", "C")])
    with pytest.raises(ValueError):
        StateSpace(["A", "B"], [("A", "B")], horizon=0)
    s = covid_state_space()
    assert len(s.transitions) == 14
    assert set(s.absorbing) == {"Discharge", "Death"}
    assert StateSpace.from_dict(s.to_dict()).allowed == s.allowed


def test_ancestors_include_state(covid):
    assert set(covid.ancestors("IMV")) == {"NSP", "SP", "NIMV", "IMV"}
    assert covid.ancestors("NSP") == ["NSP"]


def test_censored_subject_in_sp(covid):
    h = SubjectHistory(1, 1, {}, [("SP", 0.0)], 7.0)
    rec = prepare_long([h], covid)
    assert len(rec) == 4
    assert (rec["tstart"] == 0).all() and (rec["tstop"] == 7).all()
    assert rec["status"].sum() == 0


def test_path_with_three_moves(covid):
    h = SubjectHistory(1, 1, {}, [("SP", 0.0), ("NIMV", 3.0), ("IMV", 5.0)], 9.0, "Death")
    rec = prepare_long([h], covid)
    ev = rec[rec["status"] == 1]
    assert list(ev["trans"]) == ["SP->NIMV", "NIMV->IMV", "IMV->Death"]
    assert list(zip(ev["tstart"], ev["tstop"])) == [(0, 3), (3, 5), (5, 9)]
    assert list(ev["t_entry"]) == [0, 3, 5]


def test_record_count_matches_enumeration(illness_death, toy_histories):
    rec = prepare_long(toy_histories, illness_death)
    expected = 0
    for h in toy_histories:
        for state, _ in h.visits:
            expected += sum(1 for a, _ in illness_death.allowed if a == state)
    assert len(rec) == expected


def test_invalid_history_names_subject_and_visit(covid):
    bad = SubjectHistory(42, 1, {}, [("SP", 0.0), ("Recovery", 3.0), ("IMV", 4.0)], 6.0)
    with pytest.raises(HistoryError) as err:
        prepare_long([bad], covid)
    assert err.value.subject == 42 and err.value.visit_index == 2


def test_missing_covariate_rejected(illness_death):
    h = SubjectHistory(1, 1, {"x": float("nan")}, [("Healthy", 0.0)], 3.0)
    with pytest.raises(HistoryError, match="missing covariate"):
        prepare_long([h], illness_death)


def test_impute_recovery_examples(covid):
    hs = [SubjectHistory(i, 1, {}, [("SP", 0.0), ("Recovery", math.nan)], t, "Discharge")
          for i, t in enumerate((5.0, 9.0, 30.0), 1)]
    out = impute_recovery_sojourn(hs, space=covid)
    assert [h.visits[-1][1] for h in out] == [3.0, 7.0, 28.0]
    assert all(h.meta["recovery_imputed"] for h in out)
    one = impute_recovery_sojourn([SubjectHistory(1, 1, {}, [("SP", 0.0), ("Recovery", math.nan)], 10.0,
                                                  "Discharge")])
    assert one[0].visits[-1] == ("Recovery", 8.0)


def test_impute_recovery_rejects_nonpositive_stay():
    h = SubjectHistory(1, 1, {}, [("SP", 0.0), ("Recovery", math.nan)], 2.0, "Discharge")
    with pytest.raises(HistoryError):
        impute_recovery_sojourn([h])


def test_imputation_noted_in_screening(covid):
    h = SubjectHistory(1, 1, {}, [("SP", 0.0), ("Recovery", math.nan)], 6.0, "Discharge")
    rec = prepare_long(impute_recovery_sojourn([h], space=covid), covid)
    assert "notes" in check_min_events(rec, 0).attrs


def test_centering_per_subject():
    rec = pd.DataFrame({"id": [1, 1, 2, 3, 3, 3], "age": [50, 50, 60, 70, 70, 70.0],
                        "const": [4.0] * 6})
    out, c = center_covariates(rec, ["age", "const"])
    # the mean is over subjects (60), not rows (63.3)
    assert c["age"] == 60
    assert list(out.groupby("id")["age"].first()) == [-10, 0, 10]
    assert (out["const"] == 0).all()
    again, c2 = center_covariates(out, ["age"])
    assert np.allclose(again["age"], out["age"]) and c2["age"] == 0


def test_centering_binary_warns():
    rec = pd.DataFrame({"id": [1, 2], "sex": [0.0, 1.0]})
    with pytest.warns(UserWarning, match="binary"):
        center_covariates(rec, ["sex"])


def _records(events_by_cohort):
    rows = []
    sid = 0
    for g, n_ev in events_by_cohort.items():
        for k in range(n_ev + 3):
            sid += 1
            rows.append({"id": sid, "trans": "A->B", "status": int(k < n_ev), "cohort": g})
    return pd.DataFrame(rows)


def test_screening_rules():
    r = check_min_events(_records({1: 30, 2: 4}), 2).iloc[0]
    assert r["recommendation"] == "baseline-only"
    r = check_min_events(_records({1: 60}), 3).iloc[0]
    assert r["recommendation"] == "full"
    r = check_min_events(_records({1: 14}), 3).iloc[0]
    assert r["admissible"] == 2 and r["recommendation"] == "reduced"
    r = check_min_events(_records({1: 0}), 3).iloc[0]
    assert r["recommendation"] == "skip"


def test_round_trip_toy(illness_death, toy_histories):
    rec = prepare_long(toy_histories, illness_death)
    back = reconstruct_histories(rec, illness_death)
    for a, b in zip(toy_histories, back):
        assert (a.id, a.cohort, a.visits, a.end_time, a.end_state, a.covariates) == \
            (b.id, b.cohort, b.visits, b.end_time, b.end_state, b.covariates)


@st.composite
def covid_histories(draw):
    space = covid_state_space(90.0)
    out = []
    for sid in range(1, draw(st.integers(1, 6)) + 1):
        state = draw(st.sampled_from(["NSP", "SP"]))
        t = 0.0
        visits = [(state, t)]
        end_state = None
        while True:
            t += draw(st.integers(1, 10))
            nxt = draw(st.sampled_from(space.successors(state) + [None]))
            if nxt is None or t > 80:
                break
            if space.is_absorbing(nxt):
                end_state = nxt
                break
            state = nxt
            visits.append((state, t))
        if end_state is None:
            t = min(t, 90.0)
        out.append(SubjectHistory(sid, draw(st.integers(1, 3)), {"x": float(sid)}, visits, t, end_state))
    return out


@settings(max_examples=60, deadline=None)
@given(covid_histories())
def test_round_trip_property(hist):
    space = covid_state_space(90.0)
    rec = prepare_long(hist, space)
    back = reconstruct_histories(rec, space)
    assert [(h.visits, h.end_time, h.end_state, h.cohort) for h in hist] == \
        [(h.visits, h.end_time, h.end_state, h.cohort) for h in back]
    # intervals of one subject tile [0, exit]
    for h in hist:
        r = rec[rec["id"] == h.id].drop_duplicates(["tstart", "tstop"]).sort_values("tstart")
        assert r["tstart"].iloc[0] == 0 and r["tstop"].iloc[-1] == h.end_time
        assert np.all(r["tstart"].to_numpy()[1:] == r["tstop"].to_numpy()[:-1])
