"""Per-transition model specifications and design matrices."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .events import ENTRY_COLUMN
from .splines import CovariateTransform, spline_basis

COHORT_MODES = ("ignore", "covariate", "strata")

PROGNOSTIC = "prognostic"
ENTRY = "entry-time"
COHORT = "cohort"
INTERACTION = "cohort-interaction"


def cohort_label(g) -> str:
    return f"cohort[{g}]"


def interaction_label(g, q) -> str:
    return f"cohort[{g}]:{q}"


@dataclass(frozen=True)
class TransitionModelSpec:
    """Covariate structure of one transition hazard.

    Parameters
    ----------
    transition : str
        Label ``"from->to"``.
    covariates : tuple of str
        Prognostic covariate columns.
    entry_term : CovariateTransform or None
        How the state-entry time enters; None keeps the transition Markov.
    cohort_mode : {"ignore", "covariate", "strata"}
        ``"covariate"`` adds reference-coded cohort indicators (first cohort
        as reference) and, with `interaction`, cohort-by-covariate products
        for the non-reference cohorts. ``"strata"`` gives every cohort its own
        baseline hazard and, with `interaction`, one product column per
        cohort in place of the covariate's main effect.
    interaction : str or None
        Covariate interacting with cohort; ``"t_entry"`` for the entry time.
    deltas : dict
        Reporting increment per covariate for hazard ratios.
    cohorts : tuple or None
        Cohort labels in order; the first is the reference.
    """

    transition: str
    covariates: tuple = ()
    entry_term: CovariateTransform | None = None
    cohort_mode: str = "ignore"
    interaction: str | None = None
    deltas: dict = field(default_factory=dict, hash=False, compare=False)
    cohorts: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.cohort_mode not in COHORT_MODES:
            raise ValueError(f"cohort_mode must be one of {COHORT_MODES}")
        if self.interaction is not None:
            if self.cohort_mode == "ignore":
                raise ValueError("an interaction needs cohort_mode 'covariate' or 'strata'")
            if self.interaction == ENTRY_COLUMN:
                if self.entry_term is None or self.entry_term.kind != "identity":
                    raise ValueError("entry-time interaction requires an identity entry term")
            elif self.interaction not in self.covariates:
                raise ValueError(f"interaction covariate {self.interaction!r} not among covariates")
        if self.cohorts is not None:
            object.__setattr__(self, "cohorts", tuple(int(g) for g in self.cohorts))

    @property
    def source(self) -> str:
        return self.transition.split("->")[0]

    @property
    def target(self) -> str:
        return self.transition.split("->")[1]

    @property
    def stratified(self) -> bool:
        return self.cohort_mode == "strata"

    def with_(self, **kw) -> "TransitionModelSpec":
        return replace(self, **kw)

    def resolve(self, records: pd.DataFrame) -> "TransitionModelSpec":
        """Fix data-dependent parts: cohort list and spline knots."""
        spec = self
        if spec.cohorts is None:
            spec = replace(spec, cohorts=tuple(sorted(int(g) for g in records["cohort"].unique())))
        if spec.entry_term is not None and not spec.entry_term.resolved:
            spec = replace(spec, entry_term=spec.entry_term.resolve(records[ENTRY_COLUMN].to_numpy()))
        return spec

    def to_dict(self) -> dict:
        return {
            "transition": self.transition,
            "covariates": list(self.covariates),
            "entry_term": None if self.entry_term is None else self.entry_term.to_dict(),
            "cohort_mode": self.cohort_mode,
            "interaction": self.interaction,
            "deltas": dict(self.deltas),
            "cohorts": None if self.cohorts is None else list(self.cohorts),
        }

    @classmethod
    def from_dict(cls, d) -> "TransitionModelSpec":
        entry = d.get("entry_term")
        return cls(
            transition=d["transition"],
            covariates=tuple(d.get("covariates", ())),
            entry_term=None if entry in (None, False, "none") else CovariateTransform.from_dict(entry),
            cohort_mode=d.get("cohort_mode", "ignore"),
            interaction=d.get("interaction"),
            deltas=dict(d.get("deltas") or {}),
            cohorts=tuple(d["cohorts"]) if d.get("cohorts") else None,
        )


def design_matrix(records: pd.DataFrame, spec: TransitionModelSpec, check: bool = True):
    """Build ``(X, labels, kinds, strata)`` for a resolved spec.

    ``strata`` is None unless the spec stratifies on cohort.
    """
    if spec.cohorts is None or (spec.entry_term is not None and not spec.entry_term.resolved):
        raise ValueError("spec must be resolved against the data first")
    n = len(records)
    cohort = records["cohort"].to_numpy()
    cols, labels, kinds = [], [], []
    q = spec.interaction

    def qvalues():
        return records[q].to_numpy(dtype=float)

    for name in spec.covariates:
        if spec.stratified and name == q:
            continue
        cols.append(records[name].to_numpy(dtype=float))
        labels.append(name)
        kinds.append(PROGNOSTIC)
    if spec.entry_term is not None and not (spec.stratified and q == ENTRY_COLUMN):
        basis = spline_basis(records[ENTRY_COLUMN].to_numpy(dtype=float), spec.entry_term, check=check)
        for k in range(basis.shape[1]):
            cols.append(basis[:, k])
            labels.append(ENTRY_COLUMN if k == 0 else f"{ENTRY_COLUMN}:ns{k + 1}")
            kinds.append(ENTRY)
    if spec.cohort_mode == "covariate":
        for g in spec.cohorts[1:]:
            cols.append((cohort == g).astype(float))
            labels.append(cohort_label(g))
            kinds.append(COHORT)
        if q is not None:
            for g in spec.cohorts[1:]:
                cols.append((cohort == g) * qvalues())
                labels.append(interaction_label(g, q))
                kinds.append(INTERACTION)
    elif spec.cohort_mode == "strata" and q is not None:
        for g in spec.cohorts:
            cols.append((cohort == g) * qvalues())
            labels.append(interaction_label(g, q))
            kinds.append(INTERACTION)
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    strata = cohort.astype(int) if spec.stratified else None
    return X, labels, kinds, strata


def profile_row(spec: TransitionModelSpec, covariates: dict, cohort: int, t_entry: float) -> np.ndarray:
    """Design row for one covariate profile (covariates already centered)."""
    row = {"cohort": int(cohort), ENTRY_COLUMN: float(t_entry)}
    for name in spec.covariates:
        if name not in covariates:
            raise KeyError(f"profile is missing covariate {name!r} required by {spec.transition}")
        row[name] = float(covariates[name])
    X, _, _, _ = design_matrix(pd.DataFrame([row]), spec, check=False)
    return X[0]
