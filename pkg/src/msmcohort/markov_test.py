"""Landmark log-rank score test of the Markov property for one transition.

For landmark ``s`` and qualifying state ``j`` the subjects at risk for the
transition after ``s`` are split by whether they occupied ``j`` at ``s``. A
log-rank type score statistic for that membership indicator is computed
with the fitted linear predictor held fixed, standardized, tracked over a
grid of landmarks and calibrated by a wild bootstrap over event-level score
contributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

from .cox import CoxFit, _risk_sums, transition_records
from .design import design_matrix
from .states import StateSpace

SUMMARIES = ("UM", "WM", "S")
SQRT5 = np.sqrt(5.0)
MAMMEN_LOW = (1 - SQRT5) / 2
MAMMEN_HIGH = (1 + SQRT5) / 2
MAMMEN_P_LOW = (SQRT5 + 1) / (2 * SQRT5)


def mammen(rng, size) -> np.ndarray:
    """Two-point multipliers with mean 0, variance 1 and third moment 1."""
    u = rng.random(size)
    return np.where(u < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def multipliers(rng, size, law: str = "mammen") -> np.ndarray:
    if law == "mammen":
        return mammen(rng, size)
    if law == "normal":
        return rng.standard_normal(size)
    if law == "rademacher":
        return rng.choice([-1.0, 1.0], size=size)
    raise ValueError(f"unknown multiplier law {law!r}")


@dataclass(frozen=True)
class LandmarkGrid:
    landmarks: tuple
    min_arm: int = 10

    def __post_init__(self):
        s = np.asarray(self.landmarks, dtype=float)
        if s.size == 0:
            raise ValueError("landmark grid is empty")
        if np.any(np.diff(s) <= 0):
            raise ValueError("landmarks must be strictly increasing")
        object.__setattr__(self, "landmarks", tuple(float(v) for v in s))

    @property
    def t0(self) -> float:
        return self.landmarks[0]

    @property
    def tmax(self) -> float:
        return self.landmarks[-1]

    @classmethod
    def between(cls, t0, tmax, L=10, min_arm=10) -> "LandmarkGrid":
        return cls(tuple(np.linspace(t0, tmax, L)) if L > 1 else (float(t0),), min_arm)


def states_at(records: pd.DataFrame, ids, times) -> np.ndarray:
    """State occupied by each subject at each time (object array, ids x times).

    Built from the ``(from, tstart)`` pairs of the long records; None where
    the subject is no longer under observation in a transient state.
    """
    ids = np.asarray(ids)
    times = np.asarray(times, dtype=float)
    visits = records[records["id"].isin(ids)].drop_duplicates(["id", "from", "tstart"])
    out = np.full((ids.size, times.size), None, dtype=object)
    pos = {v: k for k, v in enumerate(ids)}
    for sid, g in visits.groupby("id", sort=False):
        g = g.sort_values("tstart")
        starts = g["tstart"].to_numpy(float)
        stops = g["tstop"].to_numpy(float)
        states = g["from"].to_numpy()
        k = np.searchsorted(starts, times, side="right") - 1
        ok = (k >= 0) & (times < stops[np.clip(k, 0, None)])
        row = np.full(times.size, None, dtype=object)
        row[ok] = states[k[ok]]
        out[pos[sid]] = row
    return out


def qualifying_states(space: StateSpace, transition: str) -> list:
    """Transient states from which the source state of `transition` is reachable."""
    src = transition.split("->")[0]
    return [s for s in space.ancestors(src) if not space.is_absorbing(s)]


def default_grid(records: pd.DataFrame, transition: str, L: int = 10, min_arm: int = 10):
    """Equally spaced landmarks over the window where both membership arms
    of the source state hold at least `min_arm` subjects still at risk.

    Returns None when no such window exists.
    """
    rec = transition_records(records, transition)
    src = transition.split("->")[0]
    times = np.unique(rec.loc[rec["status"] == 1, "tstop"].to_numpy(float))
    if times.size == 0:
        return None
    ids = rec["id"].to_numpy()
    tstart = rec["tstart"].to_numpy(float)
    tstop = rec["tstop"].to_numpy(float)
    ok = []
    for s in times:
        later = tstop > s
        n1 = int(np.sum(later & (tstart <= s)))
        n0 = int(np.sum(later & (tstart > s)))
        if n1 >= min_arm and n0 >= min_arm:
            ok.append(s)
    if not ok:
        return None
    if ok[0] == ok[-1]:
        return LandmarkGrid((ok[0],), min_arm)
    return LandmarkGrid.between(ok[0], ok[-1], L, min_arm)


def arm_weights(n1, n0) -> np.ndarray:
    """Harmonic arm-size weights, normalized to mean one."""
    n1 = np.asarray(n1, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.sqrt(np.where(n1 + n0 > 0, n1 * n0 / (n1 + n0), 0.0))
    m = w.mean()
    return w / m if m > 0 else np.ones_like(w)


def summarize_trace(trace, weights=None) -> dict:
    """UM (mean absolute value), WM (weighted) and S (maximum absolute value)
    of a trace over landmarks. Works along the last axis."""
    tr = np.abs(np.asarray(trace, dtype=float))
    L = tr.shape[-1]
    if L == 0:
        raise ValueError("no landmarks to summarize")
    w = np.ones(L) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.mean()
    return {"UM": tr.mean(axis=-1), "WM": (np.abs(w) * tr).mean(axis=-1), "S": tr.max(axis=-1)}


@dataclass
class _Contrib:
    """Observed statistics and per-event bootstrap contributions."""

    U: np.ndarray          # (L, J)
    var: np.ndarray        # (L, J) null variance of U
    h: np.ndarray          # (E, L, J) event contributions
    n1: np.ndarray         # (L, J)
    n0: np.ndarray
    n_events_after: np.ndarray  # (L,)


def _contributions(records, fit, landmarks, qualifying):
    rec = transition_records(records, fit.spec.transition)
    X, _, _, strata = design_matrix(rec, fit.spec)
    tstart = rec["tstart"].to_numpy(float)
    tstop = rec["tstop"].to_numpy(float)
    status = rec["status"].to_numpy(int)
    ids = rec["id"].to_numpy()
    n, p = X.shape
    L, J = len(landmarks), len(qualifying)
    s_arr = np.asarray(landmarks, dtype=float)

    occ = states_at(records, ids, s_arr)                     # (n, L)
    delta = np.stack([(occ == j) for j in qualifying], axis=-1).astype(float)  # (n, L, J)
    later = tstop[:, None] > s_arr[None, :]
    n1 = np.einsum("nl,nlj->lj", later, delta)
    n0 = later.sum(axis=0)[:, None] - n1

    eta = X @ fit.coef if p else np.zeros(n)
    w = np.exp(eta - eta.max())
    keys = [None] if strata is None else sorted(np.unique(strata).tolist())
    ev_rows = np.flatnonzero(status == 1)
    E = ev_rows.size
    h_raw = np.zeros((E, L, J))
    xres = np.zeros((E, p))
    U = np.zeros((L, J))
    V_dd = np.zeros((L, J))
    V_bd = np.zeros((L, J, p))
    I_bb = np.zeros((p, p))
    n_after = np.array([(tstop[ev_rows] > s).sum() for s in s_arr])
    D = delta.reshape(n, L * J)
    for key in keys:
        rows = np.arange(n) if key is None else np.flatnonzero(strata == key)
        ev = rows[status[rows] == 1]
        if ev.size == 0:
            continue
        times, d = np.unique(tstop[ev], return_counts=True)
        d = d.astype(float)
        Z = np.hstack([X[rows], D[rows]])
        s0, s1, s2 = _risk_sums(tstart[rows], tstop[rows], w[rows], Z, times)
        zbar = s1 / s0[:, None]                               # (K, p + LJ)
        xbar, dbar = zbar[:, :p], zbar[:, p:].reshape(-1, L, J)
        after = times[:, None] > s_arr[None, :]               # (K, L)
        cov = s2 / s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :]
        I_bb += np.tensordot(d, cov[:, :p, :p], axes=1)
        dvar = dbar * (1 - dbar)                              # diag of the delta block
        V_dd += np.einsum("k,kl,klj->lj", d, after, dvar)
        xd = cov[:, :p, p:].reshape(times.size, p, L, J)
        V_bd += np.einsum("k,kl,kplj->ljp", d, after, xd)
        pos = np.searchsorted(times, tstop[ev])
        e_pos = np.searchsorted(ev_rows, ev)
        diff = (delta[ev] - dbar[pos]) * after[pos][:, :, None]
        h_raw[e_pos] = diff
        xres[e_pos] = X[ev] - xbar[pos]
        U += diff.sum(axis=0)
    if p:
        C = linalg.solve(I_bb, V_bd.reshape(-1, p).T, assume_a="pos").T.reshape(L, J, p)
        var = V_dd - np.einsum("ljp,ljp->lj", V_bd, C)
        h = h_raw - np.einsum("ep,ljp->elj", xres, C)
    else:
        var, h = V_dd, h_raw
    return _Contrib(U, var, h, n1, n0, n_after)


def logrank_U(records, fit: CoxFit, qualifying_state, landmark):
    """Observed score statistic and its null variance for one landmark.

    The variance accounts for estimation of the coefficients (efficient
    score); with no covariates it is the usual hypergeometric-type sum
    ``sum_t d_t pbar_t (1 - pbar_t)``.
    """
    c = _contributions(records, fit, [landmark], [qualifying_state])
    return float(c.U[0, 0]), float(c.var[0, 0])


def wild_bootstrap_null(records, fit: CoxFit, grid: LandmarkGrid, qualifying, B: int = 1000,
                        seed=None, law: str = "mammen", allow_small: bool = False):
    """Bootstrap replicates of the standardized trace, shape ``(B, L, J)``.

    Each replicate reweights the event-level score contributions by
    independent multipliers (one per event, shared across landmarks and
    qualifying states). The multiplier matrix is drawn up front from a
    single seeded generator, so the output does not depend on scheduling.
    """
    if B < 1000 and not allow_small:
        raise ValueError("B must be at least 1000 (set allow_small to override)")
    c = _contributions(records, fit, grid.landmarks, list(qualifying))
    return _replicates(c, B, seed, law)


def _replicates(c: _Contrib, B, seed, law):
    rng = np.random.default_rng(seed)
    E = c.h.shape[0]
    G = multipliers(rng, (B, E), law)
    sd = np.sqrt(np.where(c.var > 0, c.var, np.nan))
    Ustar = np.tensordot(G, c.h, axes=1)                     # (B, L, J)
    return Ustar / sd[None]


@dataclass
class MarkovTestResult:
    transition: str
    status: str
    landmarks: np.ndarray
    qualifying: list
    trace: pd.DataFrame
    pvalues: pd.DataFrame
    observed: pd.DataFrame
    weights: np.ndarray
    B: int
    law: str
    degenerate: list = field(default_factory=list)
    replicates: np.ndarray = field(default=None, repr=False)

    @property
    def computable(self) -> bool:
        return self.status == "ok"

    def overall_p(self, summary: str = "S") -> float:
        return float(self.pvalues.loc[summary, "overall"])

    def report(self) -> str:
        """Plain-text table: rows are summaries, columns qualifying states and overall."""
        lines = [f"transition {self.transition}  status {self.status}  B={self.B}  law={self.law}"]
        if not self.computable:
            return lines[0]
        lines.append("landmarks " + " ".join(f"{s:g}" for s in self.landmarks))
        cols = list(self.pvalues.columns)
        lines.append("rule  " + "  ".join(f"{c:>10}" for c in cols))
        for rule, row in self.pvalues.iterrows():
            cells = []
            for c in cols:
                v = row[c]
                cells.append(f"{'-':>10}" if pd.isna(v) else
                             (f"{'<0.001':>10}" if v < 0.001 else f"{v:10.3f}"))
            lines.append(f"{rule:<4}  " + "  ".join(cells))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "transition": self.transition,
            "status": self.status,
            "B": self.B,
            "law": self.law,
            "landmarks": [float(s) for s in self.landmarks],
            "qualifying": list(self.qualifying),
            "weights": [float(w) for w in self.weights],
            "degenerate": [list(map(str, d)) for d in self.degenerate],
            "pvalues": {r: {c: (None if pd.isna(v) else float(v)) for c, v in row.items()}
                        for r, row in self.pvalues.iterrows()},
        }


def global_markov_test(records, fit: CoxFit, grid: LandmarkGrid | None = None, qualifying=None,
                       B: int = 1000, seed=None, space: StateSpace | None = None,
                       law: str = "mammen", weights=None, allow_small: bool = False,
                       keep_replicates: bool = False) -> MarkovTestResult:
    """Global landmark score test of the Markov property for ``fit``'s transition.

    Parameters
    ----------
    records : DataFrame
        Long records of all transitions (membership at the landmark needs
        the full paths).
    fit : CoxFit
        Fitted model of the transition under test.
    grid : LandmarkGrid, optional
        Defaults to :func:`default_grid`.
    qualifying : list of str, optional
        Defaults to the transient states that can reach the source state.
    weights : array, optional
        Landmark weights for WM; default harmonic arm size of the source
        state's membership arms.

    Returns
    -------
    MarkovTestResult
        p-values are the bootstrap tail shares of each summary, per
        qualifying state and for the overall chi-squared trace.
    """
    trans = fit.spec.transition
    if B < 1000 and not allow_small:
        raise ValueError("B must be at least 1000 (set allow_small to override)")
    if qualifying is None:
        if space is None:
            raise ValueError("pass qualifying states or the state space")
        qualifying = qualifying_states(space, trans)
    qualifying = list(qualifying)
    if grid is None:
        grid = default_grid(records, trans)
    empty = pd.DataFrame()
    if grid is None or not qualifying:
        return MarkovTestResult(trans, "not computable: no usable landmark window", np.array([]),
                                qualifying, empty, empty, empty, np.array([]), B, law)
    s_arr = np.asarray(grid.landmarks)
    c = _contributions(records, fit, s_arr, qualifying)
    scale = np.sqrt(np.maximum(c.var, 0.0))
    bad = ((c.var <= 1e-10 * np.maximum(1.0, np.abs(c.U)))
           | (c.n1 == 0) | (c.n0 == 0) | (c.n_events_after[:, None] == 0)
           | (np.minimum(c.n1, c.n0) < 1))
    good = ~bad
    trace = pd.DataFrame([
        {"landmark": s_arr[l], "state": qualifying[j], "U": c.U[l, j], "var": c.var[l, j],
         "Ubar": c.U[l, j] / scale[l, j] if good[l, j] else np.nan,
         "n1": int(c.n1[l, j]), "n0": int(c.n0[l, j]), "degenerate": bool(bad[l, j])}
        for l in range(len(s_arr)) for j in range(len(qualifying))
    ])
    degenerate = [(s_arr[l], qualifying[j]) for l, j in zip(*np.nonzero(bad))]
    keep_l = good.any(axis=1)
    if not keep_l.any():
        return MarkovTestResult(trans, "not computable: all landmarks degenerate", s_arr, qualifying,
                                trace, empty, empty, np.array([]), B, law, degenerate)

    if weights is None:
        src = trans.split("->")[0]
        if src in qualifying:
            jj = qualifying.index(src)
            weights = arm_weights(c.n1[:, jj], c.n0[:, jj])
        else:
            weights = arm_weights(c.n1.sum(axis=1), c.n0.sum(axis=1))
    weights = np.asarray(weights, dtype=float)

    obs = np.where(good, c.U / np.where(good, scale, 1.0), np.nan)
    rep = _replicates(c, B, seed, law)
    rep = np.where(good[None], rep, np.nan)

    pv = pd.DataFrame(index=list(SUMMARIES), columns=qualifying + ["overall"], dtype=float)
    observed = pd.DataFrame(index=list(SUMMARIES), columns=qualifying + ["overall"], dtype=float)
    for j, state in enumerate(qualifying):
        lj = good[:, j]
        if not lj.any():
            continue
        so = summarize_trace(obs[lj, j], weights[lj])
        sb = summarize_trace(rep[:, lj, j], weights[lj])
        for name in SUMMARIES:
            observed.loc[name, state] = so[name]
            pv.loc[name, state] = np.mean(sb[name] >= so[name] - 1e-12 * abs(so[name]))
    T_obs = np.nansum(obs[keep_l] ** 2, axis=-1)
    T_rep = np.nansum(rep[:, keep_l] ** 2, axis=-1)
    so = summarize_trace(T_obs, weights[keep_l])
    sb = summarize_trace(T_rep, weights[keep_l])
    for name in SUMMARIES:
        observed.loc[name, "overall"] = so[name]
        pv.loc[name, "overall"] = np.mean(sb[name] >= so[name] - 1e-12 * abs(so[name]))
    return MarkovTestResult(trans, "ok", s_arr, qualifying, trace, pv, observed, weights, B, law,
                            degenerate, rep if keep_replicates else None)
