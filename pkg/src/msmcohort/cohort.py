"""Multicohort multistate fits: cohort as covariate (M1) or as stratum (M2),
interaction selection and hazard-ratio contrasts."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .cox import CoxFit, FitError, fit_cox, likelihood_ratio_test, transition_records, wald_interval
from .design import ENTRY, TransitionModelSpec, cohort_label, interaction_label
from .events import ENTRY_COLUMN
from .splines import CovariateTransform
from .states import StateSpace

APPROACHES = {"M1": "covariate", "M2": "strata"}


def approach_mode(approach: str) -> str:
    try:
        return APPROACHES[approach.upper()]
    except KeyError:
        raise ValueError(f"approach must be M1 or M2, got {approach!r}") from None


@dataclass
class MultistateFit:
    """Per-transition Cox fits under one cohort-handling approach."""

    approach: str
    fits: dict
    space: StateSpace | None = None
    centering: dict = field(default_factory=dict)
    cohorts: tuple = (1,)
    failures: dict = field(default_factory=dict)

    def __getitem__(self, transition) -> CoxFit:
        return self.fits[transition]

    @property
    def semi_markov(self) -> dict:
        return {t: f.spec.entry_term is not None for t, f in self.fits.items()}

    def coefficient_table(self) -> pd.DataFrame:
        frames = []
        for t, f in self.fits.items():
            s = f.summary().reset_index()
            s.insert(0, "transition", t)
            frames.append(s)
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()

    def to_dict(self) -> dict:
        return {
            "approach": self.approach,
            "cohorts": list(self.cohorts),
            "centering": dict(self.centering),
            "space": None if self.space is None else self.space.to_dict(),
            "fits": {t: f.to_dict() for t, f in self.fits.items()},
            "failures": dict(self.failures),
        }

    @classmethod
    def from_dict(cls, d) -> "MultistateFit":
        return cls(d["approach"], {t: CoxFit.from_dict(v) for t, v in d["fits"].items()},
                   StateSpace.from_dict(d["space"]) if d.get("space") else None,
                   dict(d.get("centering") or {}), tuple(d.get("cohorts") or (1,)),
                   dict(d.get("failures") or {}))


def spec_for_approach(spec: TransitionModelSpec, approach: str, cohorts, pooled: bool = False
                      ) -> TransitionModelSpec:
    """Cohort handling of `approach`; `pooled` keeps one baseline for all cohorts."""
    mode = approach_mode(approach) if len(cohorts) > 1 and not pooled else "ignore"
    inter = spec.interaction if mode != "ignore" else None
    return spec.with_(cohort_mode=mode, interaction=inter, cohorts=tuple(cohorts))


def fit_multistate(records: pd.DataFrame, specs, approach: str, space: StateSpace | None = None,
                   centering=None, n_jobs: int = 1, pooled=()) -> MultistateFit:
    """Fit every transition independently under approach M1 or M2.

    Parameters
    ----------
    records : DataFrame
        Long records of all transitions.
    specs : iterable of TransitionModelSpec
        Covariate structure per transition; the cohort handling is taken
        from `approach`. With a single cohort both approaches reduce to the
        cohort-free model.
    approach : {"M1", "M2"}
    n_jobs : int
        Threads used for the independent transition fits.
    pooled : iterable of str
        Transitions fitted with a single baseline and no cohort terms under
        either approach (used for baseline-only transitions with too few
        events per cohort).

    Failed transitions are recorded in ``failures`` and left out of ``fits``.
    """
    approach = approach.upper()
    approach_mode(approach)
    cohorts = tuple(sorted(int(g) for g in records["cohort"].unique()))
    pooled = set(pooled)
    specs = [spec_for_approach(s, approach, cohorts, s.transition in pooled) for s in specs]

    def one(spec):
        try:
            return spec.transition, fit_cox(records, spec), None
        except (FitError, ValueError, np.linalg.LinAlgError) as exc:
            return spec.transition, None, f"{type(exc).__name__}: {exc}"

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, specs))
    else:
        results = [one(s) for s in specs]
    fits = {t: f for t, f, _ in results if f is not None}
    failures = {t: e for t, _, e in results if e is not None}
    for t, e in failures.items():
        warnings.warn(f"transition {t} not fitted: {e}", stacklevel=2)
    return MultistateFit(approach, fits, space, dict(centering or {}), cohorts, failures)


@dataclass
class InteractionSelection:
    chosen: str | None
    pvalues: dict
    statistics: dict
    df: dict
    skipped: dict
    alpha: float

    def table(self) -> pd.DataFrame:
        rows = [{"candidate": c, "statistic": self.statistics[c], "df": self.df[c], "p": p,
                 "chosen": c == self.chosen} for c, p in self.pvalues.items()]
        rows += [{"candidate": c, "statistic": np.nan, "df": np.nan, "p": np.nan, "chosen": False,
                  "note": msg} for c, msg in self.skipped.items()]
        return pd.DataFrame(rows)


def select_interaction(records: pd.DataFrame, spec: TransitionModelSpec, candidates=None,
                       approach: str = "M1", alpha: float = 0.05) -> InteractionSelection:
    """Keep the single cohort-by-covariate interaction with the smallest
    likelihood-ratio p-value, provided it is below `alpha`.

    Under M1 the base model has cohort main effects and the test has G - 1
    degrees of freedom. Under M2 the base model is stratified with the
    candidate's common effect, tested against cohort-specific effects, again
    with G - 1 degrees of freedom.
    """
    rec = transition_records(records, spec.transition)
    cohorts = tuple(sorted(int(g) for g in records["cohort"].unique()))
    if len(cohorts) < 2:
        return InteractionSelection(None, {}, {}, {}, {"*": "single cohort"}, alpha)
    base_spec = spec_for_approach(spec.with_(interaction=None), approach, cohorts)
    if candidates is None:
        candidates = list(spec.covariates)
        if spec.entry_term is not None and spec.entry_term.kind == "identity":
            candidates.append(ENTRY_COLUMN)
    base = fit_cox(rec, base_spec)
    pvals, statv, dfs, skipped = {}, {}, {}, {}
    for c in candidates:
        try:
            full = fit_cox(rec, base_spec.with_(interaction=c))
            stat, df, p = likelihood_ratio_test(base, full, strict=approach.upper() == "M1")
        except (FitError, ValueError) as exc:
            skipped[c] = f"{type(exc).__name__}: {exc}"
            continue
        pvals[c], statv[c], dfs[c] = p, stat, df
    chosen = None
    if pvals:
        best = min(pvals, key=pvals.get)
        if pvals[best] < alpha:
            chosen = best
    return InteractionSelection(chosen, pvals, statv, dfs, skipped, alpha)


@dataclass
class HazardRatioReport:
    transition: str
    kind: str
    cohort: int | None
    covariate: str | None
    delta: float
    estimate: np.ndarray | float
    lower: np.ndarray | float | None
    upper: np.ndarray | float | None
    grid: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        if self.grid is None:
            return pd.DataFrame([{
                "transition": self.transition, "contrast": self.kind, "cohort": self.cohort,
                "covariate": self.covariate, "delta": self.delta, "estimate": self.estimate,
                "lower": self.lower, "upper": self.upper}])
        return pd.DataFrame({"grid": self.grid, "estimate": self.estimate,
                             "lower": self.lower if self.lower is not None else np.nan,
                             "upper": self.upper if self.upper is not None else np.nan})


def _exp_report(fit, kind, g, q, delta, contrast, level, grid=None):
    if grid is None:
        est, lo, hi = wald_interval(fit, contrast, level)
        return HazardRatioReport(fit.spec.transition, kind, g, q, delta,
                                 float(np.exp(est)), float(np.exp(lo)), float(np.exp(hi)))
    out = np.array([wald_interval(fit, c, level) for c in contrast])
    return HazardRatioReport(fit.spec.transition, kind, g, q, delta, np.exp(out[:, 0]),
                             np.exp(out[:, 1]), np.exp(out[:, 2]), np.asarray(grid, dtype=float))


def _fit_of(fit, transition) -> CoxFit:
    return fit[transition] if isinstance(fit, MultistateFit) else fit


def hr_covariate_given_cohort(fit, transition: str, q: str, delta: float, g: int,
                              level: float = 0.95) -> HazardRatioReport:
    """Hazard ratio for a `delta` increase in covariate `q` within cohort `g`.

    Cohort-covariate coding: ``exp((beta_q + eta_{g.q}) delta)`` with the
    first cohort as reference. Stratified coding with an interaction on `q`:
    ``exp(eta_{g.q} delta)``. Without an interaction: ``exp(beta_q delta)``.
    """
    f = _fit_of(fit, transition)
    c = np.zeros(len(f.coef))
    has_inter = f.spec.interaction == q
    if f.spec.stratified and has_inter:
        c[f.index(interaction_label(g, q))] = delta
    else:
        if q not in f.labels:
            raise KeyError(f"covariate {q!r} not in the model for {f.spec.transition}")
        c[f.index(q)] = delta
        lab = interaction_label(g, q)
        if has_inter and lab in f.labels:
            c[f.index(lab)] = delta
    return _exp_report(f, "covariate-given-cohort", g, q, delta, c, level)


def hr_cohort_given_covariate(fit, transition: str, g: int, zq_grid=None, level: float = 0.95
                              ) -> HazardRatioReport:
    """Cohort-`g`-versus-reference hazard ratio ``exp(eta_g + eta_{g.q} z_q)``
    over a grid of (centered) `z_q` values, with pointwise Wald intervals."""
    f = _fit_of(fit, transition)
    if f.spec.stratified:
        raise ValueError("no cohort main effect under stratification; "
                         "use hr_cross_cohort_time_dependent instead")
    if f.spec.cohort_mode != "covariate":
        raise ValueError("model has no cohort terms")
    q = f.spec.interaction
    zq = np.atleast_1d(np.asarray(0.0 if zq_grid is None else zq_grid, dtype=float))
    rows = []
    for z in zq:
        c = np.zeros(len(f.coef))
        c[f.index(cohort_label(g))] = 1.0
        if q is not None:
            c[f.index(interaction_label(g, q))] = z
        rows.append(c)
    return _exp_report(f, "cohort-given-covariate", g, q, 1.0, rows, level, grid=zq)


def epanechnikov_hazard(times, increments, grid, bandwidth, support=None) -> np.ndarray:
    """Kernel-smoothed hazard from cumulative-hazard jumps.

    Epanechnikov kernel; near the ends of `support` the kernel is
    renormalized to its mass inside the support.
    """
    times = np.asarray(times, dtype=float)
    inc = np.asarray(increments, dtype=float)
    grid = np.asarray(grid, dtype=float)
    lo, hi = support if support is not None else (times.min(), times.max())
    u = (grid[:, None] - times[None, :]) / bandwidth
    k = np.where(np.abs(u) < 1, 0.75 * (1 - u ** 2), 0.0)
    raw = (k * inc[None, :]).sum(axis=1) / bandwidth
    # kernel mass of the window around each grid point that lies inside [lo, hi]
    a = np.clip((grid - hi) / bandwidth, -1, 1)
    b = np.clip((grid - lo) / bandwidth, -1, 1)
    F = lambda x: 0.75 * (x - x ** 3 / 3)  # noqa: E731
    mass = F(b) - F(a)
    return np.where(mass > 0, raw / np.where(mass > 0, mass, 1.0), np.nan)


def hr_cross_cohort_time_dependent(fit, transition: str, g: int, zq: float = 0.0, reference: int = 1,
                                   grid=None, bandwidth_frac: float = 0.2, min_events: int = 10
                                   ) -> HazardRatioReport:
    """Time-varying hazard ratio between cohorts `g` and `reference` at a fixed
    `zq`, from kernel-smoothed stratum baseline hazards."""
    f = _fit_of(fit, transition)
    if not f.spec.stratified:
        raise ValueError("requires a cohort-stratified (M2) fit")
    b_g, b_1 = f.baseline[int(g)], f.baseline[int(reference)]
    warn = []
    for key, b in ((g, b_g), (reference, b_1)):
        if b.times.size < min_events:
            warn.append(f"stratum {key} has only {b.times.size} event times; low information")
    all_t = np.concatenate([b_g.times, b_1.times])
    lo, hi = float(all_t.min()), float(all_t.max())
    bw = bandwidth_frac * (hi - lo) if hi > lo else 1.0
    if grid is None:
        grid = np.linspace(max(b_g.times.min(), b_1.times.min()),
                           min(b_g.times.max(), b_1.times.max()), 101)
    grid = np.asarray(grid, dtype=float)
    h_g = epanechnikov_hazard(b_g.times, b_g.increments, grid, bw, (lo, hi))
    h_1 = epanechnikov_hazard(b_1.times, b_1.increments, grid, bw, (lo, hi))
    q = f.spec.interaction
    shift = 0.0
    if q is not None and zq != 0.0:
        shift = (f.get(interaction_label(g, q)) - f.get(interaction_label(reference, q))) * zq
    with np.errstate(divide="ignore", invalid="ignore"):
        est = h_g / h_1 * np.exp(shift)
    for w in warn:
        warnings.warn(w, stacklevel=2)
    return HazardRatioReport(f.spec.transition, "cross-cohort-time-dependent", g, q, 1.0, est,
                             None, None, grid, warn)


def sojourn_reparameterization(report: HazardRatioReport, fit=None) -> HazardRatioReport:
    """Turn an entry-time hazard ratio into the sojourn-time hazard ratio.

    ``HR_sojourn = 1 / HR_entry``; interval bounds swap and invert.
    """
    if fit is not None:
        f = _fit_of(fit, report.transition)
        if f.spec.entry_term is None or f.spec.entry_term.kind != "identity":
            raise ValueError("sojourn reparameterization needs a linear entry-time term")
    lower = None if report.upper is None else 1.0 / report.upper
    upper = None if report.lower is None else 1.0 / report.lower
    return HazardRatioReport(report.transition, "sojourn-reparameterized", report.cohort,
                             "sojourn", report.delta, 1.0 / report.estimate, lower, upper, report.grid)


def entry_time_hr(fit, transition: str, delta: float = 1.0, g: int | None = None,
                  level: float = 0.95) -> HazardRatioReport:
    """Hazard ratio for entering the source state `delta` days later."""
    f = _fit_of(fit, transition)
    if f.spec.entry_term is None or f.spec.entry_term.kind != "identity":
        raise ValueError("model has no linear entry-time term")
    if f.spec.interaction == ENTRY_COLUMN:
        return hr_covariate_given_cohort(f, transition, ENTRY_COLUMN, delta, g or f.spec.cohorts[0], level)
    c = np.zeros(len(f.coef))
    c[f.index(ENTRY_COLUMN)] = delta
    return _exp_report(f, "covariate-given-cohort", g, ENTRY_COLUMN, delta, c, level)


@dataclass
class EntryFormComparison:
    identity: CoxFit
    spline: CoxFit
    statistic: float
    df: int
    p_value: float
    recommendation: str


def compare_entry_time_forms(records: pd.DataFrame, spec: TransitionModelSpec, alpha: float = 0.05,
                             spline: CovariateTransform | None = None) -> EntryFormComparison:
    """Likelihood ratio test of a natural-spline entry-time effect against a
    linear one. Recommends ``"identity"`` unless p < `alpha`."""
    rec = transition_records(records, spec.transition)
    lin = fit_cox(rec, spec.with_(entry_term=CovariateTransform("identity")))
    ns = spline or CovariateTransform("natural-cubic-spline")
    inter = spec.interaction if spec.interaction != ENTRY_COLUMN else None
    spl = fit_cox(rec, spec.with_(entry_term=ns, interaction=inter))
    if inter != spec.interaction:
        lin = fit_cox(rec, spec.with_(entry_term=CovariateTransform("identity"), interaction=inter))
    stat, df, p = likelihood_ratio_test(lin, spl)
    return EntryFormComparison(lin, spl, stat, df, p, "spline" if p < alpha else "identity")


def forest_table(mfits, covariate_deltas: dict, level: float = 0.95) -> pd.DataFrame:
    """Rows ``transition, approach, contrast, cohort, covariate, estimate,
    lower, upper`` for every covariate hazard ratio of every fit."""
    if isinstance(mfits, MultistateFit):
        mfits = [mfits]
    rows = []
    for mf in mfits:
        for t, f in mf.fits.items():
            names = list(f.spec.covariates)
            if f.spec.entry_term is not None and f.spec.entry_term.kind == "identity":
                names.append(ENTRY_COLUMN)
            for q in names:
                delta = f.spec.deltas.get(q, covariate_deltas.get(q, 1.0))
                cohorts = f.spec.cohorts if f.spec.interaction == q else [None]
                for g in cohorts:
                    if g is None:
                        if q not in f.labels:
                            continue
                        c = np.zeros(len(f.coef))
                        c[f.index(q)] = delta
                        r = _exp_report(f, "covariate", None, q, delta, c, level)
                    else:
                        r = hr_covariate_given_cohort(f, t, q, delta, g, level)
                    rows.append({"transition": t, "approach": mf.approach, "contrast": r.kind,
                                 "cohort": g, "covariate": q, "delta": delta, "estimate": r.estimate,
                                 "lower": r.lower, "upper": r.upper})
                    if q == ENTRY_COLUMN:
                        s = sojourn_reparameterization(r)
                        rows.append({"transition": t, "approach": mf.approach, "contrast": s.kind,
                                     "cohort": g, "covariate": "sojourn", "delta": delta,
                                     "estimate": s.estimate, "lower": s.lower, "upper": s.upper})
            if f.spec.cohort_mode == "covariate":
                for g in f.spec.cohorts[1:]:
                    c = np.zeros(len(f.coef))
                    c[f.index(cohort_label(g))] = 1.0
                    r = _exp_report(f, "cohort", g, None, 1.0, c, level)
                    rows.append({"transition": t, "approach": mf.approach, "contrast": "cohort",
                                 "cohort": g, "covariate": None, "delta": 1.0, "estimate": r.estimate,
                                 "lower": r.lower, "upper": r.upper})
    return pd.DataFrame(rows)


def lrt_pvalue(stat, df) -> float:
    return 1.0 if df == 0 else float(stats.chi2.sf(stat, df))
