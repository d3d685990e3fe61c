"""Counting-process expansion of subject histories and data preparation rules."""

from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
import pandas as pd

from .states import HistoryError, StateSpace, SubjectHistory, transition_label

BASE_COLUMNS = ["id", "from", "to", "trans", "tstart", "tstop", "status", "cohort"]
ENTRY_COLUMN = "t_entry"


def prepare_long(histories, space: StateSpace, covariates=None, entry_time: bool = True) -> pd.DataFrame:
    """Expand histories into one row per subject, visited state and possible move.

    For a visit to a transient state entered at ``t_l`` and left at ``t_e``,
    every allowed destination gets a row on the interval ``(t_l, t_e]``;
    ``status`` is 1 only for the realized destination. Times stay on the
    study clock; the entry time ``t_l`` is carried in the ``t_entry`` column
    when `entry_time` is set.

    Parameters
    ----------
    histories : iterable of SubjectHistory
    space : StateSpace
    covariates : list of str, optional
        Baseline covariates to carry. Defaults to every covariate of the
        first history.
    entry_time : bool
        Attach the state-entry time column.

    Returns
    -------
    pandas.DataFrame
        Columns ``id, from, to, trans, tstart, tstop, status, cohort``,
        optionally ``t_entry``, then the covariates.
    """
    histories = list(histories)
    if covariates is None:
        covariates = list(histories[0].covariates) if histories else []
    rows = []
    for h in histories:
        h.validate(space)
        cov = []
        for name in covariates:
            if name not in h.covariates:
                raise HistoryError(h.id, 0, f"missing covariate {name!r}")
            cov.append(float(h.covariates[name]))
        path = [s for s, _ in h.visits] + ([h.end_state] if h.end_state else [])
        for k, (state, entry, exit_) in enumerate(h.sojourns()):
            if exit_ <= entry:
                # censored at the instant of entry: no time at risk
                continue
            realized = path[k + 1] if k + 1 < len(path) else None
            for dest in space.successors(state):
                row = [h.id, state, dest, transition_label(state, dest), float(entry),
                       float(exit_), int(dest == realized), int(h.cohort)]
                if entry_time:
                    row.append(float(entry))
                rows.append(row + cov)
    columns = BASE_COLUMNS + ([ENTRY_COLUMN] if entry_time else []) + list(covariates)
    df = pd.DataFrame(rows, columns=columns)
    df["status"] = df["status"].astype(int)
    df["cohort"] = df["cohort"].astype(int)
    if any(h.meta.get("recovery_imputed") for h in histories):
        df.attrs["recovery_imputed"] = True
    return df


def reconstruct_histories(records: pd.DataFrame, space: StateSpace, covariates=None) -> list:
    """Invert :func:`prepare_long` (for visits with positive length)."""
    if covariates is None:
        skip = set(BASE_COLUMNS) | {ENTRY_COLUMN}
        covariates = [c for c in records.columns if c not in skip]
    out = []
    for sid, grp in records.groupby("id", sort=False):
        grp = grp.sort_values(["tstart", "from"])
        visits = []
        for (frm, start), _ in grp.groupby(["from", "tstart"], sort=False):
            visits.append((frm, float(start)))
        visits.sort(key=lambda v: v[1])
        end_time = float(grp["tstop"].max())
        last = grp[grp["tstart"] == grp["tstart"].max()]
        hit = last[last["status"] == 1]
        end_state = None
        if len(hit):
            dest = hit["to"].iloc[0]
            if space.is_absorbing(dest):
                end_state = dest
            else:
                visits.append((dest, end_time))
        first = grp.iloc[0]
        cov = {c: float(first[c]) for c in covariates}
        out.append(SubjectHistory(sid, int(first["cohort"]), cov, visits, end_time, end_state))
    return out


def impute_recovery_sojourn(histories, recovery_state: str = "Recovery", sojourn: float = 2.0,
                            space: StateSpace | None = None) -> list:
    """Date unobserved entries into the recovery state.

    A recovery visit with a missing (NaN) entry time gets entry
    ``end_time - sojourn``; the preceding state is thereby left at the same
    instant. Raises :class:`HistoryError` if that would leave a non-positive
    stay in the preceding state.
    """
    out = []
    for h in histories:
        visits = list(h.visits)
        changed = False
        for k, (state, entry) in enumerate(visits):
            if state != recovery_state or not _missing(entry):
                continue
            if k != len(visits) - 1:
                raise HistoryError(h.id, k, "recovery with unknown entry must be the last transient visit")
            if h.end_state is None:
                raise HistoryError(h.id, k, "recovery entry cannot be imputed for a censored subject")
            imputed = h.end_time - sojourn
            if k == 0 or not visits[k - 1][1] < imputed:
                prior = visits[k - 1][1] if k else None
                raise HistoryError(
                    h.id, k,
                    f"imputed recovery entry {imputed:g} leaves no positive stay after entry {prior}",
                )
            visits[k] = (state, float(imputed))
            changed = True
        if changed:
            meta = dict(h.meta, recovery_imputed=True)
            h = replace(h, visits=visits, meta=meta)
        if space is not None:
            h.validate(space)
        out.append(h)
    return out


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def center_covariates(records: pd.DataFrame, names):
    """Subtract per-subject means from the named covariate columns.

    Means are taken over unique subjects, not over rows. Returns the new
    frame and a dict of centering constants.
    """
    out = records.copy()
    constants = {}
    per_subject = records.groupby("id", sort=False)[list(names)].first()
    for name in names:
        col = per_subject[name]
        if set(np.unique(col)) <= {0.0, 1.0}:
            warnings.warn(f"centering binary indicator {name!r}", stacklevel=2)
        mean = float(col.mean())
        constants[name] = mean
        out[name] = records[name] - mean
    return out, constants


def check_min_events(records: pd.DataFrame, covariates, threshold_per_predictor: int = 5,
                     per_cohort: bool = True, min_cohort_events: int = 5) -> pd.DataFrame:
    """Events-per-predictor screening for every transition.

    Parameters
    ----------
    records : DataFrame
        Output of :func:`prepare_long`.
    covariates : dict or int
        Per-transition predictor lists (keyed by label ``"A->B"``) or one
        predictor count used for all transitions.
    threshold_per_predictor : int
        Events required per predictor.
    per_cohort : bool
        Restrict to the baseline hazard when any cohort has
        ``min_cohort_events`` events or fewer.

    Returns
    -------
    DataFrame
        One row per transition with event counts, admissible predictor count
        and a recommendation in ``{"full", "reduced", "baseline-only", "skip"}``.
    """
    cohorts = sorted(records["cohort"].unique())
    rows = []
    for trans, grp in records.groupby("trans", sort=False):
        ev = grp[grp["status"] == 1]
        n_events = len(ev)
        by_cohort = ev.groupby("cohort").size().reindex(cohorts, fill_value=0)
        if isinstance(covariates, int):
            n_pred = covariates
        else:
            n_pred = len(covariates.get(trans, ()))
        admissible = n_events // threshold_per_predictor
        if n_events == 0:
            rec = "skip"
        elif (per_cohort and by_cohort.min() <= min_cohort_events) or n_events <= min_cohort_events:
            rec = "baseline-only"
        elif admissible >= n_pred:
            rec = "full"
        else:
            rec = "reduced"
        row = {"trans": trans, "events": n_events}
        for g in cohorts:
            row[f"events_cohort{g}"] = int(by_cohort[g])
        row.update(predictors=n_pred, admissible=int(admissible), recommendation=rec)
        rows.append(row)
    report = pd.DataFrame(rows)
    if "recovery_imputed" in records.attrs:
        report.attrs["notes"] = [
            "recovery entry imputed as exit minus fixed sojourn; the preceding state "
            "is assumed left at the imputed recovery entry"
        ]
    return report
