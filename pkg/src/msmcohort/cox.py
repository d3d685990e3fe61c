"""Cox proportional hazards engine for one transition.

Counting-process data with delayed entry (risk intervals ``(tstart, tstop]``),
Breslow handling of ties, optional stratification with shared coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .design import TransitionModelSpec, design_matrix

MAX_COEF = 50.0
FLAT_COEF = 10.0


class FitError(RuntimeError):
    pass


class MonotoneLikelihoodError(FitError):
    def __init__(self, covariates):
        self.covariates = list(covariates)
        super().__init__(
            "monotone likelihood: coefficient(s) diverging for " + ", ".join(self.covariates)
        )


class RankDeficiencyError(FitError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("design matrix is rank deficient; collinear columns: " + ", ".join(self.columns))


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class StepFunction:
    """Right-continuous cumulative hazard built from jump times and sizes."""

    times: np.ndarray
    increments: np.ndarray
    last_time: float = np.inf

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.increments = np.asarray(self.increments, dtype=float)
        self.values = np.cumsum(self.increments)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[0.0], self.values])
        return vals[idx]

    def evaluate(self, t):
        """Return ``(value, extrapolated)``; past the last observed time the
        final value is carried forward and flagged."""
        t = np.asarray(t, dtype=float)
        return self(t), t > self.last_time


def _risk_sums(tstart, tstop, w, X, times, second=True):
    """Weighted sums over the risk sets ``{tstart < t <= tstop}`` at `times`.

    Sums are formed directly from at-risk masks (blocked over `times`)
    rather than as differences of cumulative sums, which lose precision
    under delayed entry when late entrants carry very large weights.
    """
    n, p = X.shape
    K = times.size
    wX = w[:, None] * X
    wXX = (wX[:, :, None] * X[:, None, :]).reshape(n, p * p) if second else None
    s0 = np.empty(K)
    s1 = np.empty((K, p))
    s2 = np.empty((K, p * p)) if second else None
    block = max(1, 2_000_000 // max(n, 1))
    for lo in range(0, K, block):
        t = times[lo:lo + block, None]
        at_risk = ((tstart[None, :] < t) & (tstop[None, :] >= t)).astype(float)
        s0[lo:lo + block] = at_risk @ w
        s1[lo:lo + block] = at_risk @ wX
        if second:
            s2[lo:lo + block] = at_risk @ wXX
    return s0, s1, (s2.reshape(K, p, p) if second else None)


@dataclass
class _Stratum:
    key: object
    rows: np.ndarray
    times: np.ndarray
    d: np.ndarray
    event_rows: np.ndarray
    event_index: np.ndarray


def _strata(tstart, tstop, status, strata):
    keys = [None] if strata is None else sorted(np.unique(strata).tolist())
    out = []
    for key in keys:
        rows = np.arange(len(tstop)) if key is None else np.flatnonzero(strata == key)
        ev = rows[status[rows] == 1]
        times, d = np.unique(tstop[ev], return_counts=True)
        out.append(_Stratum(key, rows, times, d.astype(float), ev,
                            np.searchsorted(times, tstop[ev])))
    return out


def _loglik(beta, tstart, tstop, X, strata_list, need_info=True):
    p = X.shape[1]
    eta = X @ beta
    ll, U, I = 0.0, np.zeros(p), np.zeros((p, p))
    for st in strata_list:
        if st.times.size == 0:
            continue
        e = eta[st.rows]
        c = e.max()
        w = np.exp(e - c)
        s0, s1, s2 = _risk_sums(tstart[st.rows], tstop[st.rows], w, X[st.rows], st.times, need_info)
        ll += eta[st.event_rows].sum() - np.sum(st.d * (np.log(s0) + c))
        xbar = s1 / s0[:, None]
        U += X[st.event_rows].sum(axis=0) - (st.d[:, None] * xbar).sum(axis=0)
        if need_info:
            v = s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
            I += np.tensordot(st.d, v, axes=1)
    return ll, U, I


def _check_rank(X, labels, strata):
    if X.shape[1] == 0:
        return
    Xc = X.copy()
    if strata is None:
        Xc -= Xc.mean(axis=0)
    else:
        for key in np.unique(strata):
            m = strata == key
            Xc[m] -= Xc[m].mean(axis=0)
    scale = np.abs(Xc).max(axis=0)
    dead = [labels[k] for k in np.flatnonzero(scale == 0)]
    if dead:
        raise RankDeficiencyError(dead)
    Xc /= scale
    _, r, piv = linalg.qr(Xc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > diag[0] * max(Xc.shape) * 1e-10))
    if rank < X.shape[1]:
        raise RankDeficiencyError([labels[k] for k in sorted(piv[rank:])])


def _newton_size(U, I) -> float:
    """Largest remaining Newton step in standard-error units (scale free)."""
    try:
        d = np.sqrt(np.clip(np.diag(linalg.inv(I)), 0, None))
    except (linalg.LinAlgError, ValueError):
        return np.inf
    return float(np.max(np.abs(U) * d, initial=0.0))


def coxph(tstart, tstop, status, X, strata=None, labels=None, max_iter=50, tol=1e-9):
    """Maximize the (stratified) Breslow partial likelihood by damped Newton.

    Returns a dict with ``coef``, ``cov``, ``loglik``, ``loglik_init``,
    ``score``, ``n_iter`` and ``converged``.
    """
    tstart = np.asarray(tstart, dtype=float)
    tstop = np.asarray(tstop, dtype=float)
    status = np.asarray(status, dtype=int)
    X = np.asarray(X, dtype=float).reshape(len(tstop), -1)
    p = X.shape[1]
    labels = list(labels) if labels is not None else [f"x{k}" for k in range(p)]
    if np.any(tstart >= tstop):
        raise ValueError("every record needs tstart < tstop")
    if status.sum() == 0:
        raise FitError("no events")
    _check_rank(X, labels, strata)
    # iterate on centered, unit-variance columns; Newton steps are equivariant
    # and the divergence thresholds then read in standard-deviation units
    Xc = X - X.mean(axis=0) if p else X
    sd = Xc.std(axis=0) if p else np.ones(0)
    sd = np.where(sd > 0, sd, 1.0)
    Xc = Xc / sd
    st = _strata(tstart, tstop, status, strata)

    beta = np.zeros(p)
    ll, U, I = _loglik(beta, tstart, tstop, Xc, st)
    ll_init = ll
    converged = p == 0
    it = 0
    while not converged and it < max_iter:
        it += 1
        try:
            step = linalg.solve(I, U, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(I, U)[0]
        halvings = 0
        # near the optimum the gain is below loglik round-off; skip the line search
        near = _newton_size(U, I) < 1e-3
        while True:
            cand = beta + step
            ll_new, U_new, I_new = _loglik(cand, tstart, tstop, Xc, st)
            if np.isfinite(ll_new) and (near or ll_new >= ll - 1e-12 * abs(ll)):
                break
            step = step / 2
            halvings += 1
            if halvings > 30:
                break
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        beta, ll, U, I = cand, ll_new, U_new, I_new
        big = np.abs(beta) > MAX_COEF
        if big.any():
            raise MonotoneLikelihoodError([labels[k] for k in np.flatnonzero(big)])
        if rel < tol and _newton_size(U, I) < 1e-6:
            converged = True
    if p:
        try:
            cov = linalg.inv(I)
        except linalg.LinAlgError:
            cov = linalg.pinv(I)
        cov = (cov + cov.T) / 2
        # a large coefficient on an essentially flat likelihood is diverging
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
        flat = (np.abs(beta) > FLAT_COEF) & (se > 100 * np.abs(beta))
        if flat.any():
            raise MonotoneLikelihoodError([labels[k] for k in np.flatnonzero(flat)])
        cov = cov / np.outer(sd, sd)
    else:
        cov = np.zeros((0, 0))
    return dict(coef=beta / sd, cov=cov, loglik=float(ll), loglik_init=float(ll_init), score=U * sd,
                information=I * np.outer(sd, sd), n_iter=it, converged=converged)


def _baseline(tstart, tstop, status, X, beta, strata):
    out = {}
    eta = X @ beta if X.shape[1] else np.zeros(len(tstop))
    w = np.exp(eta)
    for st in _strata(tstart, tstop, status, strata):
        rows = st.rows
        s0, _, _ = _risk_sums(tstart[rows], tstop[rows], w[rows], np.zeros((len(rows), 0)),
                              st.times, second=False)
        key = 0 if st.key is None else int(st.key)
        out[key] = StepFunction(st.times, st.d / s0, float(tstop[rows].max()))
    return out


@dataclass
class CoxFit:
    """Result of :func:`fit_cox`."""

    spec: TransitionModelSpec
    labels: list
    kinds: list
    coef: np.ndarray
    cov: np.ndarray
    loglik: float
    loglik_init: float
    n_iter: int
    converged: bool
    baseline: dict
    n_obs: int
    n_events: int
    score: np.ndarray = field(default=None, repr=False)
    information: np.ndarray = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    @property
    def stratified(self) -> bool:
        return self.spec.stratified

    def index(self, label) -> int:
        return self.labels.index(label)

    def get(self, label, default=0.0) -> float:
        return float(self.coef[self.labels.index(label)]) if label in self.labels else default

    def linear_predictor(self, x) -> float:
        return float(np.dot(x, self.coef)) if len(self.coef) else 0.0

    def cumulative_hazard(self, stratum=0) -> StepFunction:
        return self.baseline[stratum if self.stratified else 0]

    def summary(self) -> pd.DataFrame:
        se = self.se
        z = np.divide(self.coef, se, out=np.full_like(self.coef, np.nan), where=se > 0)
        q = stats.norm.ppf(0.975)
        return pd.DataFrame({
            "coef": self.coef, "se": se, "z": z,
            "p": 2 * stats.norm.sf(np.abs(z)),
            "lower": self.coef - q * se, "upper": self.coef + q * se,
            "hr": np.exp(self.coef), "kind": self.kinds,
        }, index=pd.Index(self.labels, name="term"))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "labels": list(self.labels),
            "kinds": list(self.kinds),
            "coef": self.coef.tolist(),
            "se": self.se.tolist(),
            "cov": self.cov.tolist(),
            "loglik": self.loglik,
            "loglik_init": self.loglik_init,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "n_obs": self.n_obs,
            "n_events": self.n_events,
            "baseline": {
                str(k): {"time": v.times.tolist(), "increment": v.increments.tolist(),
                         "last_time": v.last_time}
                for k, v in self.baseline.items()
            },
        }

    @classmethod
    def from_dict(cls, d) -> "CoxFit":
        return cls(
            spec=TransitionModelSpec.from_dict(d["spec"]),
            labels=list(d["labels"]), kinds=list(d["kinds"]),
            coef=np.asarray(d["coef"], dtype=float),
            cov=np.asarray(d["cov"], dtype=float).reshape(len(d["coef"]), len(d["coef"])),
            loglik=d["loglik"], loglik_init=d["loglik_init"], n_iter=d["n_iter"],
            converged=d["converged"],
            baseline={int(k): StepFunction(v["time"], v["increment"], v.get("last_time", np.inf))
                      for k, v in d["baseline"].items()},
            n_obs=d["n_obs"], n_events=d["n_events"],
        )


def transition_records(records: pd.DataFrame, transition: str) -> pd.DataFrame:
    return records[records["trans"] == transition]


def fit_cox(records: pd.DataFrame, spec: TransitionModelSpec, max_iter: int = 50,
            tol: float = 1e-9) -> CoxFit:
    """Fit the Cox model of `spec` to the rows of its transition.

    `records` may hold every transition; only rows whose ``trans`` equals
    ``spec.transition`` are used. Raises :class:`MonotoneLikelihoodError`
    when a coefficient diverges and :class:`RankDeficiencyError` for a
    collinear design.
    """
    if "trans" in records.columns:
        records = transition_records(records, spec.transition)
    if len(records) == 0:
        raise FitError(f"no records for transition {spec.transition}")
    spec = spec.resolve(records)
    X, labels, kinds, strata = design_matrix(records, spec)
    tstart = records["tstart"].to_numpy(dtype=float)
    tstop = records["tstop"].to_numpy(dtype=float)
    status = records["status"].to_numpy(dtype=int)
    res = coxph(tstart, tstop, status, X, strata, labels, max_iter=max_iter, tol=tol)
    if not res["converged"]:
        import warnings

        warnings.warn(f"{spec.transition}: no convergence after {res['n_iter']} iterations",
                      ConvergenceWarning, stacklevel=2)
    base = _baseline(tstart, tstop, status, X, res["coef"], strata)
    return CoxFit(spec, labels, kinds, res["coef"], res["cov"], res["loglik"], res["loglik_init"],
                  res["n_iter"], res["converged"], base, len(records), int(status.sum()),
                  res["score"], res["information"])


def breslow_baseline(fit: CoxFit, records: pd.DataFrame) -> dict:
    """Per-stratum Breslow cumulative baseline hazard at the fitted coefficients."""
    if "trans" in records.columns:
        records = transition_records(records, fit.spec.transition)
    X, _, _, strata = design_matrix(records, fit.spec)
    return _baseline(records["tstart"].to_numpy(float), records["tstop"].to_numpy(float),
                     records["status"].to_numpy(int), X, fit.coef, strata)


def likelihood_ratio_test(nested: CoxFit, full: CoxFit, strict: bool = True):
    """Likelihood ratio test of `nested` within `full`.

    With ``strict`` the nested coefficient labels must be a subset of the
    full ones; otherwise only the parameter counts are compared (for
    reparameterized but nested column spaces).

    Returns ``(statistic, df, p_value)``.
    """
    if strict and not set(nested.labels) <= set(full.labels):
        raise ValueError("models are not nested: " + ", ".join(sorted(set(nested.labels) - set(full.labels))))
    if nested.n_obs != full.n_obs or nested.n_events != full.n_events:
        raise ValueError("models were fitted to different records")
    if nested.spec.stratified != full.spec.stratified:
        raise ValueError("models use different strata")
    df = len(full.labels) - len(nested.labels)
    if df < 0:
        raise ValueError("nested model has more parameters than the full model")
    stat = max(0.0, 2.0 * (full.loglik - nested.loglik))
    p = 1.0 if df == 0 else float(stats.chi2.sf(stat, df))
    return stat, df, p


def wald_interval(fit: CoxFit, contrast, level: float = 0.95):
    """Estimate and Wald interval of ``contrast . coef`` on the log-hazard scale."""
    c = np.asarray(contrast, dtype=float)
    if c.shape != fit.coef.shape:
        raise ValueError(f"contrast has length {c.size}, expected {fit.coef.size}")
    est = float(c @ fit.coef)
    half = stats.norm.ppf(0.5 + level / 2) * np.sqrt(max(float(c @ fit.cov @ c), 0.0))
    return est, est - half, est + half


@dataclass
class ScoreProcessResult:
    """Cumulative score process for one covariate and its simulated null."""

    covariate: str
    times: np.ndarray
    observed: np.ndarray
    simulated: np.ndarray
    sup_observed: float
    sup_simulated: np.ndarray
    p_value: float


def _event_grid(tstart, tstop, status, X, beta, strata):
    """Per-stratum xbar, baseline increments and information increments on
    the union grid of event times."""
    grid = np.unique(tstop[status == 1])
    K, p = grid.size, X.shape[1]
    keys = [None] if strata is None else sorted(np.unique(strata).tolist())
    eta = X @ beta if p else np.zeros(len(tstop))
    w = np.exp(eta - eta.max()) if len(eta) else eta
    out = {}
    info_inc = np.zeros((K, p, p))
    for key in keys:
        rows = np.arange(len(tstop)) if key is None else np.flatnonzero(strata == key)
        ev = rows[status[rows] == 1]
        d = np.zeros(K)
        np.add.at(d, np.searchsorted(grid, tstop[ev]), 1.0)
        s0, s1, s2 = _risk_sums(tstart[rows], tstop[rows], w[rows], X[rows], grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            xbar = np.where(s0[:, None] > 0, s1 / s0[:, None], 0.0)
            dL = np.where(s0 > 0, d / s0, 0.0)
            v = s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
        v[s0 <= 0] = 0.0
        info_inc += d[:, None, None] * v
        out[key] = dict(rows=rows, d=d, xbar=xbar, dL=dL)
    return grid, out, info_inc, w


def ph_score_process(fit: CoxFit, records: pd.DataFrame, covariate: str, B: int = 500,
                     seed=None, allow_small: bool = False) -> ScoreProcessResult:
    """Cumulative sum of martingale-based score residuals over event times.

    The null distribution is simulated by perturbing each record's
    martingale score contribution with standard normal multipliers,
    including the correction for estimating the coefficients. The p-value is
    the share of simulated suprema at least as large as the observed one.
    """
    if B < 500 and not allow_small:
        raise ValueError("B must be at least 500")
    if "trans" in records.columns:
        records = transition_records(records, fit.spec.transition)
    X, labels, _, strata = design_matrix(records, fit.spec)
    k = labels.index(covariate)
    tstart = records["tstart"].to_numpy(float)
    tstop = records["tstop"].to_numpy(float)
    status = records["status"].to_numpy(int)
    grid, per, info_inc, w = _event_grid(tstart, tstop, status, X, fit.coef, strata)
    n, K, p = len(tstop), grid.size, X.shape[1]

    A = np.zeros((n, K))        # component k of each record's score martingale up to grid[t]
    A_tau = np.zeros((n, p))    # all components at the end of follow-up
    for key, q in per.items():
        rows = q["rows"]
        dL = q["dL"]
        cumL = np.concatenate([[0.0], np.cumsum(dL)])
        cumD = np.concatenate([np.zeros((1, p)), np.cumsum(q["xbar"] * dL[:, None], axis=0)])
        xr = X[rows]
        wr = w[rows]
        ia = np.searchsorted(grid, tstart[rows], side="right")
        ib = np.searchsorted(grid, tstop[rows], side="right")
        cols = np.arange(K)[None, :] + 1
        hi = np.minimum(cols, ib[:, None])
        lo = ia[:, None]
        active = hi > lo
        comp = wr[:, None] * (xr[:, [k]] * (cumL[hi] - cumL[lo]) - (cumD[hi, k] - cumD[lo, k]))
        comp = np.where(active, comp, 0.0)
        ev = status[rows] == 1
        jump = np.zeros((len(rows), K))
        e_idx = np.searchsorted(grid, tstop[rows][ev])
        jump[np.flatnonzero(ev), e_idx] = xr[ev, k] - q["xbar"][e_idx, k]
        A[rows] = np.cumsum(jump, axis=1) - comp
        comp_tau = wr[:, None] * (xr * (cumL[ib] - cumL[ia])[:, None] - (cumD[ib] - cumD[ia]))
        jump_tau = np.zeros((len(rows), p))
        jump_tau[ev] = xr[ev] - q["xbar"][e_idx]
        A_tau[rows] = jump_tau - comp_tau

    observed = A.sum(axis=0)
    I_t = np.cumsum(info_inc[:, k, :], axis=0)          # K x p
    I_tau = info_inc.sum(axis=0)
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((B, n))
    proj = linalg.solve(I_tau, (G @ A_tau).T, assume_a="pos")  # p x B
    sim = G @ A - (I_t @ proj).T
    sup_obs = float(np.max(np.abs(observed))) if K else 0.0
    sup_sim = np.max(np.abs(sim), axis=1) if K else np.zeros(B)
    return ScoreProcessResult(covariate, grid, observed, sim, sup_obs, sup_sim,
                              float(np.mean(sup_sim >= sup_obs)))
