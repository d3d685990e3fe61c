"""File formats: wide and long CSV data, YAML run configuration, fit and
curve artifacts."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .cohort import MultistateFit
from .design import TransitionModelSpec
from .events import BASE_COLUMNS, ENTRY_COLUMN
from .splines import CovariateTransform
from .states import StateSpace, SubjectHistory, covid_state_space, transition_label

SCHEMA_VERSION = 1
ENTRY_PREFIX = "entry:"
UNKNOWN = "?"


class DataError(ValueError):
    """Input file problem located by data row (1-based, header excluded) and column."""

    def __init__(self, message, row=None, column=None):
        self.row, self.column = row, column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__((", ".join(where) + ": " if where else "") + message)


# ---------------------------------------------------------------- wide format

def write_wide(histories, space: StateSpace, path, covariates=None) -> None:
    """One row per subject: ``id, cohort``, covariates, one ``entry:<state>``
    column per transient state (empty when not visited, ``?`` when the entry
    time is unknown), then ``end_time, end_state`` (empty when censored)."""
    histories = list(histories)
    if covariates is None:
        covariates = list(histories[0].covariates) if histories else []
    transient = [s for s in space.states if not space.is_absorbing(s)]
    rows = []
    for h in histories:
        row = {"id": h.id, "cohort": h.cohort}
        row.update({c: h.covariates[c] for c in covariates})
        entries = dict((s, t) for s, t in h.visits)
        for s in transient:
            t = entries.get(s)
            row[ENTRY_PREFIX + s] = "" if s not in entries else (UNKNOWN if _nan(t) else repr(float(t)))
        row["end_time"] = h.end_time
        row["end_state"] = h.end_state or ""
        rows.append(row)
    cols = ["id", "cohort", *covariates, *(ENTRY_PREFIX + s for s in transient), "end_time", "end_state"]
    pd.DataFrame(rows, columns=cols).to_csv(path, index=False)


def _nan(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def _number(value, row, column):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise DataError(f"not a number: {value!r}", row, column) from None
    if math.isnan(v):
        raise DataError("missing value", row, column)
    return v


def read_wide(path, space: StateSpace) -> list:
    """Parse a wide CSV into histories. Visits are ordered by entry time; an
    unknown (``?``) entry sorts last and is left for
    :func:`~msmcohort.events.impute_recovery_sojourn`."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if df.empty:
        raise DataError("no subjects in input")
    for col in ("id", "cohort", "end_time", "end_state"):
        if col not in df.columns:
            raise DataError("required column missing", column=col)
    entry_cols = [c for c in df.columns if c.startswith(ENTRY_PREFIX)]
    for c in entry_cols:
        if c[len(ENTRY_PREFIX):] not in space.states:
            raise DataError(f"unknown state {c[len(ENTRY_PREFIX):]!r}", column=c)
    covs = [c for c in df.columns if c not in ("id", "cohort", "end_time", "end_state") and c not in entry_cols]
    out = []
    for i, rec in enumerate(df.to_dict("records"), start=1):
        cohort = _number(rec["cohort"], i, "cohort")
        if cohort != int(cohort):
            raise DataError("cohort must be an integer", i, "cohort")
        cov = {c: _number(rec[c], i, c) for c in covs}
        visits = []
        for c in entry_cols:
            v = rec[c].strip()
            if v == "":
                continue
            visits.append((c[len(ENTRY_PREFIX):], math.nan if v == UNKNOWN else _number(v, i, c)))
        if not visits:
            raise DataError("subject visits no state", i)
        visits.sort(key=lambda sv: (math.isnan(sv[1]), sv[1]))
        end = _number(rec["end_time"], i, "end_time")
        end_state = rec["end_state"].strip() or None
        if end_state is not None and end_state not in space.states:
            raise DataError(f"unknown state {end_state!r}", i, "end_state")
        sid = rec["id"]
        try:
            sid = int(sid)
        except ValueError:
            pass
        out.append(SubjectHistory(sid, int(cohort), cov, visits, end, end_state))
    return out


# ---------------------------------------------------------------- long format

def read_long(path, space: StateSpace | None = None) -> pd.DataFrame:
    """Parse long records (``id, from, to, tstart, tstop, status, cohort``
    then covariates) and check every row."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if df.empty:
        raise DataError("no subjects in input")
    need = [c for c in BASE_COLUMNS if c != "trans"]
    for col in need:
        if col not in df.columns:
            raise DataError("required column missing", column=col)
    numeric = [c for c in df.columns if c not in ("id", "from", "to", "trans")]
    out = df.copy()
    for c in numeric:
        vals = pd.to_numeric(df[c].str.strip(), errors="coerce")
        bad = np.flatnonzero(vals.isna().to_numpy())
        if bad.size:
            raise DataError(f"not a number: {df[c].iloc[bad[0]]!r}", int(bad[0]) + 1, c)
        out[c] = vals
    out["status"] = out["status"].astype(int)
    out["cohort"] = out["cohort"].astype(int)
    ids = pd.to_numeric(out["id"], errors="coerce")
    if not ids.isna().any():
        out["id"] = ids.astype(int)
    if "trans" not in out.columns:
        out.insert(3, "trans", [transition_label(a, b) for a, b in zip(out["from"], out["to"])])
    if ENTRY_COLUMN not in out.columns:
        out.insert(8, ENTRY_COLUMN, out["tstart"])
    for i, r in enumerate(out[["from", "to", "tstart", "tstop", "status"]].itertuples(index=False), 1):
        if not r.tstart < r.tstop:
            raise DataError("tstart must be below tstop", i, "tstop")
        if r.status not in (0, 1):
            raise DataError("status must be 0 or 1", i, "status")
        if space is not None and (r[0], r[1]) not in space.allowed:
            raise DataError(f"transition {r[0]}->{r[1]} not allowed", i, "to")
    return out


def write_long(records: pd.DataFrame, path) -> None:
    records.to_csv(path, index=False)


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    """Parsed YAML run configuration (see the README for the schema)."""

    space: StateSpace
    data: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    approach: str = "both"
    markov_test: dict = field(default_factory=dict)
    prediction: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    seed: int = 0
    alpha: float = 0.05
    out: str = "run"
    digest: str = ""
    base: Path = Path(".")

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.approach.lower() not in ("m1", "m2", "both"):
            raise ValueError("approach must be m1, m2 or both")

    @property
    def approaches(self) -> list:
        a = self.approach.upper()
        return ["M1", "M2"] if a == "BOTH" else [a]

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def transition_specs(self, covariates=None) -> list:
        """Per-transition specs: ``models.default`` overlaid by
        ``models.transitions[<label>]``."""
        default = dict(self.models.get("default") or {})
        if covariates is not None and "covariates" not in default:
            default["covariates"] = list(covariates)
        over = self.models.get("transitions") or {}
        specs = []
        for a, b in self.space.allowed:
            label = transition_label(a, b)
            d = {**default, **(over.get(label) or {})}
            specs.append(spec_from_config(label, d))
        return specs


def _entry_term(v):
    if v in (None, False, "none"):
        return None
    if v in (True, "identity", "linear"):
        return CovariateTransform("identity")
    if v in ("spline", "natural-cubic-spline", "ns"):
        return CovariateTransform("natural-cubic-spline")
    return CovariateTransform.from_dict(v)


def spec_from_config(label: str, d: dict) -> TransitionModelSpec:
    inter = d.get("interaction")
    return TransitionModelSpec(
        transition=label,
        covariates=tuple(d.get("covariates") or ()),
        entry_term=_entry_term(d.get("entry_term")),
        cohort_mode="covariate" if inter else "ignore",
        interaction=inter if isinstance(inter, str) else None,
        deltas=dict(d.get("deltas") or {}),
    )


def parse_space(d) -> StateSpace:
    """State space from ``{states, transitions, horizon}`` or ``{preset: covid, horizon}``."""
    if d.get("preset"):
        if d["preset"] != "covid":
            raise ValueError(f"unknown state-space preset {d['preset']!r}")
        return covid_state_space(float(d.get("horizon", 90.0)))
    return StateSpace.from_dict(d)


def load_config(path) -> RunConfig:
    path = Path(path)
    raw = path.read_bytes()
    d = yaml.safe_load(raw) or {}
    if "space" not in d:
        raise ValueError("configuration needs a 'space' section")
    return RunConfig(
        space=parse_space(d["space"]),
        data=dict(d.get("data") or {}),
        models=dict(d.get("models") or {}),
        approach=str(d.get("approach", "both")),
        markov_test=dict(d.get("markov_test") or {}),
        prediction=dict(d.get("prediction") or {}),
        generator=dict(d.get("generator") or {}),
        seed=int(d.get("seed", 0)),
        alpha=float(d.get("alpha", 0.05)),
        out=str(d.get("out", "run")),
        digest=hashlib.sha256(raw).hexdigest(),
        base=path.parent,
    )


def metadata(config: RunConfig, seed: int, command: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "package_version": __version__,
            "command": command, "config_sha256": config.digest, "seed": int(seed)}


# ---------------------------------------------------------------- artifacts

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return None if math.isnan(f) else (str(f) if math.isinf(f) else f)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _restore_inf(o):
    if isinstance(o, dict):
        return {k: _restore_inf(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_restore_inf(v) for v in o]
    if o in ("inf", "-inf"):
        return float(o)
    return o


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")


def read_json(path):
    return _restore_inf(json.loads(Path(path).read_text()))


def save_fit(mfit: MultistateFit, path, meta: dict | None = None) -> None:
    write_json({"metadata": meta or {}, "fit": mfit.to_dict()}, path)


def load_fit(path) -> MultistateFit:
    return MultistateFit.from_dict(read_json(path)["fit"])


def write_table(df: pd.DataFrame, path, meta: dict | None = None) -> None:
    """CSV with an optional leading ``# key: value`` metadata block."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        df.to_csv(fh, index=False)


def read_table(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")
